//! Fixed-capacity exemplar memory filled by herding.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::model::L3Model;
use crate::numerics::Tensor;

/// Raw-input exemplars per class, each list ordered by herding rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    capacity: usize,
    input_dim: usize,
    classes_seen: usize,
    exemplars: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl Memory {
    pub fn new(capacity: usize, input_dim: usize) -> Self {
        Self { capacity, input_dim, classes_seen: 0, exemplars: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes_seen(&self) -> usize {
        self.classes_seen
    }

    /// Total stored exemplars.
    pub fn len(&self) -> usize {
        self.exemplars.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-class quota `floor(capacity / classes)`.
    pub fn quota(&self, classes: usize) -> Result<usize> {
        if classes == 0 {
            return Err(invalid("quota for zero classes"));
        }
        let q = self.capacity / classes;
        if q == 0 {
            return Err(invalid(format!("memory capacity {} is below {} classes", self.capacity, classes)));
        }
        Ok(q)
    }

    /// Exemplars of class `c` in herding order.
    pub fn exemplars(&self, c: usize) -> &[Vec<f64>] {
        self.exemplars.get(&c).map_or(&[], Vec::as_slice)
    }

    pub fn class_count(&self, c: usize) -> usize {
        self.exemplars(c).len()
    }

    /// Classes holding at least one exemplar, ascending.
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.exemplars.iter().filter(|(_, v)| !v.is_empty()).map(|(&c, _)| c)
    }

    /// All exemplars stacked by ascending class id, then herding rank.
    pub fn as_batch(&self) -> Result<Option<(Tensor, Vec<usize>)>> {
        let mut rows = Vec::with_capacity(self.len());
        let mut labels = Vec::with_capacity(self.len());
        for (&c, list) in &self.exemplars {
            for r in list {
                rows.push(r.as_slice());
                labels.push(c);
            }
        }
        if rows.is_empty() {
            return Ok(None);
        }
        Ok(Some((Tensor::from_rows(&rows)?, labels)))
    }

    /// Stores `rows` (herding order) for class `c`, replacing any previous
    /// list.
    pub fn set_class(&mut self, c: usize, rows: Vec<Vec<f64>>) -> Result<()> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_dim) {
            return Err(invalid(format!("exemplar width {} != {}", r.len(), self.input_dim)));
        }
        self.exemplars.insert(c, rows);
        self.classes_seen = self.classes_seen.max(c + 1);
        Ok(())
    }
}

/// Greedy herding: repeatedly adds the sample that keeps the running mean of
/// the selection closest to the full mean. Ties go to the lowest index.
pub fn herding_select(features: &Tensor, quota: usize) -> Result<Vec<usize>> {
    let (n, d) = features.dims2()?;
    if quota > n {
        return Err(invalid(format!("herding quota {quota} exceeds {n} candidates")));
    }
    let mut mu = vec![0.0; d];
    for row in features.iter_rows().take(n) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut selected = Vec::with_capacity(quota);
    let mut taken = vec![false; n];
    let mut sum = vec![0.0; d];
    for k in 0..quota {
        let inv = 1.0 / (k + 1) as f64;
        let mut best = None;
        let mut best_gap = f64::INFINITY;
        for j in (0..n).filter(|&j| !taken[j]) {
            let f = features.row(j);
            let gap: f64 = (0..d).map(|i| (mu[i] - (sum[i] + f[i]) * inv).powi(2)).sum();
            if gap < best_gap {
                best_gap = gap;
                best = Some(j);
            }
        }
        let j = best.expect("quota <= n leaves a candidate");
        taken[j] = true;
        for (s, v) in sum.iter_mut().zip(features.row(j)) {
            *s += v;
        }
        selected.push(j);
    }
    Ok(selected)
}

/// Recomputes quotas for the classes seen so far, truncates stored classes
/// to their herding prefix, and fills the classes present in `(x, y)` by
/// herding on the current model's features.
///
/// A zero-capacity memory is left untouched.
pub fn update_memory(memory: &mut Memory, model: &L3Model, x: &Tensor, y: &[usize]) -> Result<()> {
    if memory.capacity == 0 {
        return Ok(());
    }
    if x.rows() != y.len() {
        return Err(invalid(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let mut new_classes: Vec<usize> = y.to_vec();
    new_classes.sort_unstable();
    new_classes.dedup();
    let seen = memory
        .exemplars
        .keys()
        .copied()
        .chain(new_classes.iter().copied())
        .max()
        .map_or(0, |m| m + 1)
        .max(memory.classes_seen);
    let quota = memory.quota(seen)?;
    memory.classes_seen = seen;
    for list in memory.exemplars.values_mut() {
        list.truncate(quota);
    }
    for &c in &new_classes {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        let xs = x.select_rows(&idx)?;
        let feats = model.forward_features(&xs)?;
        let order = herding_select(&feats, quota.min(idx.len()))?;
        let rows = order.into_iter().map(|k| xs.row(k).to_vec()).collect();
        memory.set_class(c, rows)?;
    }
    Ok(())
}
