use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::report::{CombinedSummary, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("compare needs at least two run directories, got {0}")]
    TooFew(usize),
    #[error("{}: no summary.json (is this a run directory?)", .0.display())]
    MissingSummary(PathBuf),
    #[error("{path}: unreadable summary: {1}", path = .0.display())]
    BadSummary(PathBuf, String),
    #[error("{label} has {found} tasks, {base_label} has {expected}")]
    TaskMismatch {
        label: String,
        found: usize,
        base_label: String,
        expected: usize,
    },
}

/// One compared line: a single run, or one arm's seed mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub accuracy: Vec<f64>,
    pub average: f64,
}

/// Per-task and average accuracy aligned across runs, with deltas against the first row.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

fn load_rows(dir: &Path) -> Result<Vec<CompareRow>, CompareError> {
    let path = dir.join("summary.json");
    if !path.is_file() {
        return Err(CompareError::MissingSummary(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CompareError::BadSummary(path.clone(), e.to_string()))?;
    let label = dir.display().to_string();
    if let Ok(run) = serde_json::from_str::<RunSummary>(&text) {
        return Ok(vec![CompareRow {
            label,
            accuracy: run.final_accuracy,
            average: run.average,
        }]);
    }
    let combined: CombinedSummary =
        serde_json::from_str(&text).map_err(|e| CompareError::BadSummary(path.clone(), e.to_string()))?;
    Ok(combined
        .arms
        .into_iter()
        .map(|a| CompareRow {
            label: format!("{label}:{}", a.arm),
            accuracy: a.mean_accuracy,
            average: a.mean_average,
        })
        .collect())
}

pub fn compare(dirs: &[PathBuf]) -> Result<Comparison, CompareError> {
    if dirs.len() < 2 {
        return Err(CompareError::TooFew(dirs.len()));
    }
    let mut rows = Vec::new();
    for d in dirs {
        rows.extend(load_rows(d)?);
    }
    let base = &rows[0];
    for r in &rows[1..] {
        if r.accuracy.len() != base.accuracy.len() {
            return Err(CompareError::TaskMismatch {
                label: r.label.clone(),
                found: r.accuracy.len(),
                base_label: base.label.clone(),
                expected: base.accuracy.len(),
            });
        }
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn n_tasks(&self) -> usize {
        self.rows[0].accuracy.len()
    }

    /// `(per-task, average)` differences of row `i` from the first row.
    pub fn delta(&self, i: usize) -> (Vec<f64>, f64) {
        let (b, r) = (&self.rows[0], &self.rows[i]);
        let per = r.accuracy.iter().zip(&b.accuracy).map(|(x, y)| x - y).collect();
        (per, r.average - b.average)
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_tasks();
        let mut s = String::from("run");
        for t in 1..=n {
            write!(s, ",acc_task_{t}").unwrap();
        }
        s.push_str(",average");
        for t in 1..=n {
            write!(s, ",delta_task_{t}").unwrap();
        }
        s.push_str(",delta_average\n");
        for (i, r) in self.rows.iter().enumerate() {
            let (d, da) = self.delta(i);
            s.push_str(&r.label.replace(',', ";"));
            for a in &r.accuracy {
                write!(s, ",{a}").unwrap();
            }
            write!(s, ",{}", r.average).unwrap();
            for x in d {
                write!(s, ",{x}").unwrap();
            }
            writeln!(s, ",{da}").unwrap();
        }
        s
    }

    pub fn to_pretty(&self) -> String {
        let n = self.n_tasks();
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
        let mut s = format!("{:w$}", "run");
        for t in 1..=n {
            write!(s, "  {:>7}", format!("task {t}")).unwrap();
        }
        s.push_str("      avg   Δavg\n");
        for (i, r) in self.rows.iter().enumerate() {
            write!(s, "{:w$}", r.label).unwrap();
            for a in &r.accuracy {
                write!(s, "  {a:>7.4}").unwrap();
            }
            writeln!(s, "  {:>7.4} {:>+6.3}", r.average, self.delta(i).1).unwrap();
        }
        s
    }
}
