use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::RumorExample;
use crate::error::{Error, Result};

/// Read `{claim, comments, label, domain}` records, one per line. Blank lines
/// are skipped; the first malformed line aborts with its 1-based number.
pub fn load_jsonl(path: &Path) -> Result<Vec<RumorExample>> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(BufReader::new(file), path)
}

pub fn parse_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<RumorExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let ex: RumorExample = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if ex.claim.trim().is_empty() {
            return Err(err("empty claim".into()));
        }
        out.push(ex);
    }
    Ok(out)
}
