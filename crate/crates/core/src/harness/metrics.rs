use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;

/// Macro-averaged F1 over the two labels, in percent. A class with no
/// predictions or no support contributes an F1 of zero.
pub fn f1_score(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "F1 needs aligned non-empty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for class in Label::ALL {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == class, y == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / (tp + fn_) as f64;
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / 2.0 * 100.0)
}

/// `R[j][i]`: F1 on task `i` (1-based) after training through task `j`;
/// row 0 is the untrained baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RMatrix {
    n: usize,
    cells: Vec<Vec<Option<f64>>>,
}

impl RMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            n: n_tasks,
            cells: vec![vec![None; n_tasks]; n_tasks + 1],
        }
    }

    /// Fully populated matrix from `(N+1)` rows of `N` values.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.len() != n + 1 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("an R matrix needs N+1 rows of N values".into()));
        }
        let mut m = Self::new(n);
        for (j, row) in rows.into_iter().enumerate() {
            for (i, v) in row.into_iter().enumerate() {
                m.set(j, i + 1, v)?;
            }
        }
        Ok(m)
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, row: usize, task: usize, f1: f64) -> Result<()> {
        if row > self.n || task == 0 || task > self.n {
            return Err(Error::Shape(format!("cell ({row}, {task}) outside {} tasks", self.n)));
        }
        if !(0.0..=100.0).contains(&f1) {
            return Err(Error::Input(format!("F1 {f1} outside [0, 100]")));
        }
        self.cells[row][task - 1] = Some(f1);
        Ok(())
    }

    pub fn get(&self, row: usize, task: usize) -> Option<f64> {
        if task == 0 {
            return None;
        }
        self.cells.get(row)?.get(task - 1).copied().flatten()
    }

    fn need(&self, row: usize, task: usize) -> Result<f64> {
        self.get(row, task)
            .ok_or_else(|| Error::Harness(format!("R[{row}][{task}] is missing")))
    }

    /// CSV with a `row,1..N` header; row 0 is labeled `baseline`, missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for i in 1..=self.n {
            write!(s, ",{i}").expect("write to string");
        }
        s.push('\n');
        for (j, row) in self.cells.iter().enumerate() {
            if j == 0 {
                s.push_str("baseline");
            } else {
                write!(s, "{j}").expect("write to string");
            }
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    write!(s, "{v}").expect("write to string");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("R-matrix CSV: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let n = header.split(',').count() - 1;
        let mut m = Self::new(n);
        for (j, line) in lines.enumerate() {
            let mut fields = line.split(',');
            fields.next();
            for (i, f) in fields.enumerate() {
                if !f.is_empty() {
                    let v = f.parse::<f64>().map_err(|_| bad("bad number"))?;
                    m.set(j, i + 1, v)?;
                }
            }
        }
        Ok(m)
    }
}

/// Mean of the final row.
pub fn avg_f1(r: &RMatrix) -> Result<f64> {
    let n = r.n_tasks();
    if n == 0 {
        return Err(Error::Harness("empty R matrix".into()));
    }
    let mut sum = 0.0;
    for i in 1..=n {
        sum += r.need(n, i)?;
    }
    Ok(sum / n as f64)
}

/// Mean change on earlier tasks between finishing them and finishing the
/// stream. `None` for a single task.
pub fn bwt(r: &RMatrix) -> Result<Option<f64>> {
    let n = r.n_tasks();
    if n < 2 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for i in 1..n {
        sum += r.need(n, i)? - r.need(i, i)?;
    }
    Ok(Some(sum / (n - 1) as f64))
}

/// Mean zero-shot gain on each unseen task over the untrained baseline.
/// `None` for a single task.
pub fn fwt(r: &RMatrix) -> Result<Option<f64>> {
    let n = r.n_tasks();
    if n < 2 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for i in 2..=n {
        sum += r.need(i - 1, i)? - r.need(0, i)?;
    }
    Ok(Some(sum / (n - 1) as f64))
}

/// Mean few-shot F1 over per-task scores.
pub fn fs_f1(per_task: &[f64]) -> Result<f64> {
    if per_task.is_empty() {
        return Err(Error::Harness("no few-shot records".into()));
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Headline numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub avg_f1: f64,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    pub fs_f1: BTreeMap<usize, f64>,
}
