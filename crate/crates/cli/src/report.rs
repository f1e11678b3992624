use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cptrd_core::harness::StageRecord;

use crate::run::{CellMetrics, Summary};
use crate::Usage;

const NOT_IMPLEMENTED: &str = "EANN, Adapter and ParallelAdapter baselines are not implemented.";

struct Cell {
    metrics: CellMetrics,
    stages: Vec<StageRecord>,
}

fn find_cells(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_cells(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn load_cell(metrics_path: &Path) -> Result<Cell> {
    let metrics: CellMetrics = serde_json::from_str(&std::fs::read_to_string(metrics_path)?)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    let stages_path = metrics_path.with_file_name("stages.jsonl");
    let text = std::fs::read_to_string(&stages_path).with_context(|| format!("reading {}", stages_path.display()))?;
    let stages = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", stages_path.display()))?;
    Ok(Cell { metrics, stages })
}

fn fmt(s: Option<Summary>, with_std: bool) -> String {
    match s {
        Some(s) if with_std => format!("{:.2} ± {:.2}", s.mean, s.std),
        Some(s) => format!("{:.2}", s.mean),
        None => "n/a".into(),
    }
}

pub fn cmd_report(out: &Path) -> Result<()> {
    if !out.is_dir() {
        bail!(Usage(format!("{} is not a directory", out.display())));
    }
    let mut paths = Vec::new();
    find_cells(out, &mut paths)?;
    if paths.is_empty() {
        bail!(Usage(format!("no completed runs under {}", out.display())));
    }
    let mut by_method: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
    for p in &paths {
        let cell = load_cell(p)?;
        by_method.entry(cell.metrics.method.clone()).or_default().push(cell);
    }
    let shots: BTreeSet<usize> = by_method
        .values()
        .flatten()
        .flat_map(|c| c.metrics.metrics.fs_f1.keys().copied())
        .collect();

    let mut table = String::new();
    let fs_head: String = shots.iter().map(|k| format!(" {:>9}", format!("fs.F1@{k}"))).collect();
    writeln!(table, "{:<32} {:>4} {:>16} {:>8} {:>8}{fs_head} {:>9}", "method", "runs", "Avg.F1", "FWT", "BWT", "params%")?;
    let mut curve = String::from("method,task");
    for k in &shots {
        write!(curve, ",fs_f1_{k}")?;
    }
    curve.push('\n');

    for (method, cells) in &by_method {
        let pick = |f: &dyn Fn(&CellMetrics) -> Option<f64>| Summary::of(&cells.iter().filter_map(|c| f(&c.metrics)).collect::<Vec<_>>());
        let fs_cols: String = shots
            .iter()
            .map(|k| format!(" {:>9}", fmt(pick(&|m| m.metrics.fs_f1.get(k).copied()), false)))
            .collect();
        writeln!(
            table,
            "{:<32} {:>4} {:>16} {:>8} {:>8}{fs_cols} {:>9.4}",
            method,
            cells.len(),
            fmt(pick(&|m| Some(m.metrics.avg_f1)), true),
            fmt(pick(&|m| m.metrics.fwt), false),
            fmt(pick(&|m| m.metrics.bwt), false),
            100.0 * cells[0].metrics.trainable_fraction,
        )?;

        // Cumulative mean few-shot F1 up to each task index, averaged over runs.
        let n_tasks = cells.iter().map(|c| c.stages.len()).max().unwrap_or(0);
        for t in 1..=n_tasks {
            write!(curve, "{method},{t}")?;
            for k in &shots {
                let per_run: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| {
                        let xs: Vec<f64> = c.stages.iter().take(t).filter_map(|s| s.few_shot_f1.get(k).copied()).collect();
                        (xs.len() == t).then(|| xs.iter().sum::<f64>() / t as f64)
                    })
                    .collect();
                match Summary::of(&per_run) {
                    Some(s) => write!(curve, ",{}", s.mean)?,
                    None => curve.push(','),
                }
            }
            curve.push('\n');
        }
    }
    writeln!(table, "\n{NOT_IMPLEMENTED}")?;
    print!("{table}");
    std::fs::write(out.join("report.txt"), &table)?;
    std::fs::write(out.join("fs_curve.csv"), curve)?;
    Ok(())
}
