//! One task of class-incremental training: minibatch SGD over the task data
//! together with the memory, cross-entropy plus distillation against the
//! previous model, elementwise gradient clipping and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::{kd_loss, DistillConfig, ProjectionHeads};
use crate::error::{invalid, Error, Result};
use crate::model::{cross_entropy, L3Model, ModelSnapshot};
use crate::numerics::{Tape, Tensor};

use super::memory::Memory;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Gradients are clamped elementwise to `[-clip, clip]`.
    pub clip: f64,
    /// Epochs without strict validation improvement before stopping; 0
    /// disables early stopping.
    pub patience: usize,
    /// Share of the task data held out for early stopping.
    pub val_fraction: f64,
    /// Weight of the distillation term against cross-entropy.
    pub kd_scale: f64,
    /// `None` trains with cross-entropy only.
    pub distill: Option<DistillConfig>,
    /// When false the projection heads keep their initial weights.
    pub train_heads: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 50,
            batch_size: 32,
            clip: 10.0,
            patience: 10,
            val_fraction: 0.1,
            kd_scale: 1.0,
            distill: Some(DistillConfig::default()),
            train_heads: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(invalid(format!("clip must be positive, got {}", self.clip)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !(self.kd_scale >= 0.0 && self.kd_scale.is_finite()) {
            return Err(invalid(format!("kd_scale must be >= 0, got {}", self.kd_scale)));
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }
}

/// Batch-averaged losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    /// Distillation loss before `kd_scale`; absent without an old model.
    pub kd: Option<f64>,
    pub total: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub stopped_early: bool,
    pub best_val_acc: Option<f64>,
    /// Largest ridge any Gram factorization needed.
    pub max_ridge: f64,
    /// Largest Gram condition estimate seen.
    pub max_condition: f64,
}

fn argmax_accuracy(model: &L3Model, x: &Tensor, y: &[usize]) -> Result<f64> {
    let logits = model.forward_logits(x)?;
    let c = logits.cols();
    let hits = y
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

fn as_step_error(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { step },
        other => other,
    }
}

/// Trains `model` on task `(x, y)` plus the memory contents.
///
/// With `old` present and `cfg.distill` set, each step minimizes
/// `CE + kd_scale * KD`; otherwise plain cross-entropy.
pub fn train_task(
    model: &mut L3Model,
    old: Option<&ModelSnapshot>,
    x: &Tensor,
    y: &[usize],
    memory: &Memory,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if x.rows() != y.len() || y.is_empty() {
        return Err(invalid(format!("task has {} rows and {} labels", x.rows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= model.num_classes()) {
        return Err(invalid(format!("label {bad} exceeds classifier width {}", model.num_classes())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (y.len() as f64 * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(y.len() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let mut fit_idx = fit_idx.to_vec();
    fit_idx.sort_unstable();
    let val = if n_val > 0 {
        let mut v = val_idx.to_vec();
        v.sort_unstable();
        Some((x.select_rows(&v)?, v.iter().map(|&i| y[i]).collect::<Vec<_>>()))
    } else {
        None
    };

    let mut pool_x = x.select_rows(&fit_idx)?;
    let mut pool_y: Vec<usize> = fit_idx.iter().map(|&i| y[i]).collect();
    if let Some((mx, my)) = memory.as_batch()? {
        pool_x = Tensor::vstack(&[&pool_x, &mx])?;
        pool_y.extend(my);
    }
    let distill = match (old, &cfg.distill) {
        (Some(o), Some(d)) => Some((o, *d)),
        _ => None,
    };

    let mut report = TrainReport::default();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut perm: Vec<usize> = (0..pool_y.len()).collect();
    for epoch in 0..cfg.epochs {
        perm.shuffle(&mut rng);
        let (mut ce_sum, mut kd_sum, mut tot_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in perm.chunks(cfg.batch_size) {
            let step = report.steps;
            let xb = pool_x.select_rows(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| pool_y[i]).collect();

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let forward = |tape: &mut Tape| -> Result<_> {
                let xv = tape.constant(xb.clone());
                let feats = bound.features(tape, xv)?;
                let logits = bound.logits(tape, feats)?;
                let ce = cross_entropy(tape, logits, &yb)?;
                let Some((old, dcfg)) = distill else {
                    return Ok((ce, ce, None));
                };
                let old_feats = old.forward_features(&xb)?;
                let heads = ProjectionHeads { live: &bound, old: old.model() };
                let kd = kd_loss(tape, feats, &old_feats, &heads, &dcfg)?;
                let scaled = tape.affine(kd.loss, cfg.kd_scale, 0.0)?;
                let total = tape.add(ce, scaled)?;
                Ok((total, ce, Some(kd)))
            };
            let (total, ce, kd) = forward(&mut tape).map_err(|e| as_step_error(e, step))?;
            let total_v = tape.value(total).item().unwrap_or(f64::NAN);
            if !total_v.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            ce_sum += tape.value(ce).item().unwrap_or(0.0);
            tot_sum += total_v;
            if let Some(kd) = kd {
                kd_sum += tape.value(kd.loss).item().unwrap_or(0.0);
                for r in std::iter::once(kd.euclidean_report).chain(kd.hyperbolic_report) {
                    report.max_ridge = report.max_ridge.max(r.ridge_added);
                    report.max_condition = report.max_condition.max(r.condition_estimate);
                }
            }
            batches += 1;

            tape.backward(total).map_err(|e| as_step_error(e, step))?;
            let handles = bound.params().to_vec();
            let groups = model.parameter_groups();
            for ((p, v), group) in model.parameters_mut().into_iter().zip(handles).zip(groups) {
                if !cfg.train_heads && group.is_head() {
                    continue;
                }
                let Some(g) = tape.grad(v) else { continue };
                for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= cfg.lr * gi.clamp(-cfg.clip, cfg.clip);
                }
            }
            report.steps += 1;
        }

        let val_acc = match &val {
            Some((vx, vy)) => Some(argmax_accuracy(model, vx, vy)?),
            None => None,
        };
        let nb = batches.max(1) as f64;
        report.epochs.push(EpochStats {
            epoch,
            ce: ce_sum / nb,
            kd: distill.map(|_| kd_sum / nb),
            total: tot_sum / nb,
            val_acc,
        });
        if let Some(acc) = val_acc {
            if acc > best {
                best = acc;
                since_best = 0;
            } else {
                since_best += 1;
            }
            report.best_val_acc = Some(best);
            if cfg.patience > 0 && since_best >= cfg.patience {
                report.stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    Ok(report)
}
