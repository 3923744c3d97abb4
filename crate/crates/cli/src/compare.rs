//! Side-by-side table of several runs.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;
use crate::results::ResultsFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub source: PathBuf,
    pub seeds: Vec<u64>,
    /// `Acc_t` per task, averaged over the row's seeds.
    pub acc: Vec<f64>,
    /// `F_t` per task; `None` for the first task.
    pub forgetting: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub num_tasks: usize,
    pub rows: Vec<ComparisonRow>,
}

fn row_of(path: &Path) -> Result<ComparisonRow, CliError> {
    Ok(match ResultsFile::read(path)? {
        ResultsFile::Seed(r) => {
            if r.tasks.len() != r.num_tasks {
                return Err(CliError::Incompatible(format!(
                    "{} is incomplete ({} of {} tasks)",
                    path.display(),
                    r.tasks.len(),
                    r.num_tasks
                )));
            }
            ComparisonRow {
                method: r.method.clone(),
                source: path.to_path_buf(),
                seeds: vec![r.seed],
                acc: r.tasks.iter().map(|t| t.acc).collect(),
                forgetting: r.tasks.iter().map(|t| t.forgetting).collect(),
            }
        }
        ResultsFile::Summary(s) => ComparisonRow {
            method: s.method.clone(),
            source: path.to_path_buf(),
            seeds: s.seeds.clone(),
            acc: s.acc_mean.clone(),
            forgetting: s.forgetting_mean.clone(),
        },
    })
}

/// One row per file; all files must cover the same number of tasks.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Comparison, CliError> {
    if paths.is_empty() {
        return Err(CliError::Incompatible("no results files given".into()));
    }
    let rows = paths.iter().map(|p| row_of(p)).collect::<Result<Vec<_>, _>>()?;
    let num_tasks = rows[0].acc.len();
    if let Some(r) = rows.iter().find(|r| r.acc.len() != num_tasks) {
        return Err(CliError::Incompatible(format!(
            "{} has {} tasks, {} has {}",
            r.source.display(),
            r.acc.len(),
            rows[0].source.display(),
            num_tasks
        )));
    }
    Ok(Comparison { num_tasks, rows })
}

impl Comparison {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }

    /// Fixed-width table with accuracies and forgetting in percent.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16} {:>5}", "method", "seeds");
        for t in 1..=self.num_tasks {
            let _ = write!(out, " {:>7}", format!("Acc_{t}"));
        }
        for t in 2..=self.num_tasks {
            let _ = write!(out, " {:>7}", format!("F_{t}"));
        }
        out.push_str("  source\n");
        for r in &self.rows {
            let _ = write!(out, "{:<16} {:>5}", r.method, r.seeds.len());
            for a in &r.acc {
                let _ = write!(out, " {:>7.2}", 100.0 * a);
            }
            for f in r.forgetting.iter().skip(1) {
                match f {
                    Some(f) => {
                        let _ = write!(out, " {:>7.2}", 100.0 * f);
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            let _ = writeln!(out, "  {}", r.source.display());
        }
        out
    }
}
