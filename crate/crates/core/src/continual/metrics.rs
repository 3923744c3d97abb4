//! Accuracy matrix with average accuracy and forgetting.

use crate::error::{invalid, Result};

/// `acc[t][i]`: accuracy on task `i` after training task `t` (both 0-based,
/// `i <= t`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLedger {
    acc: Vec<Vec<f64>>,
}

impl MetricsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the row for the next task; it must hold one value per task
    /// seen so far, each in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.acc.len() + 1 {
            return Err(invalid(format!("row {} needs {} entries, got {}", self.acc.len(), self.acc.len() + 1, row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("accuracy {v} outside [0, 1]")));
        }
        self.acc.push(row);
        Ok(())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut l = Self::new();
        for r in rows {
            l.push_row(r)?;
        }
        Ok(l)
    }

    pub fn num_tasks(&self) -> usize {
        self.acc.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.acc
    }

    pub fn acc(&self, t: usize, i: usize) -> Option<f64> {
        self.acc.get(t).and_then(|r| r.get(i)).copied()
    }
}

/// Average accuracy `Acc_t` and forgetting `F_t` after task `t` (1-based).
///
/// `Acc_t = (1/t) sum_i Acc[t][i]`;
/// `F_t = (1/(t-1)) sum_{i<t} (max_{j<t} Acc[j][i] - Acc[t][i])`, absent
/// for `t = 1`.
pub fn compute_metrics(ledger: &MetricsLedger, t: usize) -> Result<(f64, Option<f64>)> {
    if t == 0 || t > ledger.num_tasks() {
        return Err(invalid(format!("ledger has {} rows, asked for task {t}", ledger.num_tasks())));
    }
    let row = &ledger.acc[t - 1];
    let acc = row.iter().sum::<f64>() / t as f64;
    if t == 1 {
        return Ok((acc, None));
    }
    let mut f = 0.0;
    for i in 0..t - 1 {
        let best = (i..t - 1).map(|j| ledger.acc[j][i]).fold(f64::NEG_INFINITY, f64::max);
        f += best - row[i];
    }
    Ok((acc, Some(f / (t - 1) as f64)))
}
