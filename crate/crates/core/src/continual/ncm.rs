//! Nearest-class-mean prediction on backbone features.

use crate::error::{invalid, Result};
use crate::model::L3Model;
use crate::numerics::Tensor;

use super::memory::Memory;

/// Mean backbone feature of every class `0..classes_seen`, computed from the
/// stored exemplars with the current model.
pub fn class_means(model: &L3Model, memory: &Memory) -> Result<Vec<Vec<f64>>> {
    let mut means = Vec::with_capacity(memory.classes_seen());
    for c in 0..memory.classes_seen() {
        let ex = memory.exemplars(c);
        if ex.is_empty() {
            return Err(invalid(format!("no exemplars stored for class {c}")));
        }
        let feats = model.forward_features(&Tensor::from_rows(ex)?)?;
        let mut mu = vec![0.0; feats.cols()];
        for row in feats.iter_rows().take(feats.rows()) {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = feats.rows() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        means.push(mu);
    }
    Ok(means)
}

/// Index of the nearest template for each feature row; ties go to the lowest
/// class id.
pub fn ncm_predict_features(features: &Tensor, means: &[Vec<f64>]) -> Result<Vec<usize>> {
    if means.is_empty() {
        return Err(invalid("no class templates"));
    }
    let (b, d) = features.dims2()?;
    if means.iter().any(|m| m.len() != d) {
        return Err(invalid("template width differs from feature width"));
    }
    Ok((0..b)
        .map(|i| {
            let f = features.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, mu) in means.iter().enumerate() {
                let dist: f64 = f.iter().zip(mu).map(|(a, m)| (a - m) * (a - m)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn ncm_predict(model: &L3Model, memory: &Memory, x: &Tensor) -> Result<Vec<usize>> {
    let means = class_means(model, memory)?;
    ncm_predict_features(&model.forward_features(x)?, &means)
}
