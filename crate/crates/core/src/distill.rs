//! Distillation through RKHS subspace distances.
//!
//! For a new embedding `z` and old embeddings `Z = {z_1..z_m}`, the squared
//! RKHS distance from `phi(z)` to `span{phi(z_i)}` has the closed form
//!
//! ```text
//! delta(z, Z) = k(z, z) - k_zZ^T K_ZZ^{-1} k_zZ
//! ```
//!
//! with minimizing coefficients `alpha = K_ZZ^{-1} k_zZ`. The combined loss
//! averages `delta` over the batch in the Euclidean space and in the Poincaré
//! ball, the latter weighted by `beta`.
//!
//! The old side is always a constant: `K_ZZ` is factorized once per batch
//! and space, and gradients reach only the new embeddings.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec};
use crate::manifold;
use crate::model::{BoundModel, L3Model};
use crate::numerics::linalg::{factor_spd, CholeskyFactor, SpdSolveReport};
use crate::numerics::{Tape, Tensor, Var};

/// Weights and kernel parameters of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// Weight of the hyperbolic term.
    pub beta: f64,
    pub lambda_e: f64,
    pub lambda_h: f64,
    pub curvature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { beta: 1.0, lambda_e: 1.0, lambda_h: 1.0, curvature: 1.0 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        self.euclidean_kernel()?;
        self.hyperbolic_kernel()?;
        Ok(())
    }

    pub fn euclidean_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::euclidean(self.lambda_e)
    }

    pub fn hyperbolic_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::hyperbolic(self.lambda_h, self.curvature)
    }
}

/// Old embeddings together with their factorized Gram matrix.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    points: Tensor,
    gram: Tensor,
    report: SpdSolveReport,
    factor: Arc<CholeskyFactor>,
    spec: KernelSpec,
}

impl SubspaceBasis {
    pub fn new(spec: KernelSpec, points: Tensor) -> Result<Self> {
        let gram = kernels::gram_matrix(&spec, &points)?;
        let (factor, report) = factor_spd(&gram)?;
        Ok(Self { points, gram, report, factor: Arc::new(factor), spec })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    /// Unregularized Gram matrix; the factor includes [`Self::gram_ridge`].
    pub fn gram(&self) -> &Tensor {
        &self.gram
    }

    pub fn gram_ridge(&self) -> f64 {
        self.report.ridge_added
    }

    pub fn report(&self) -> SpdSolveReport {
        self.report
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { left: d, right: self.dim() })
        }
    }
}

/// Coefficients `alpha = K_ZZ^{-1} k_zZ` of the best approximation of
/// `phi(z)` inside the span.
pub fn alpha_solve(z: &[f64], basis: &SubspaceBasis) -> Result<Vec<f64>> {
    basis.check_dim(z.len())?;
    let k = kernels::cross_kernel(&basis.spec, z, &basis.points)?;
    let m = k.numel();
    let col = k.reshape(vec![m, 1])?;
    Ok(basis.factor.solve(&col)?.into_data())
}

/// Closed-form squared distance from `phi(z)` to the span, clamped at zero.
pub fn subspace_distance(z: &[f64], basis: &SubspaceBasis) -> Result<f64> {
    basis.check_dim(z.len())?;
    let k = kernels::cross_kernel(&basis.spec, z, &basis.points)?;
    let alpha = alpha_solve(z, basis)?;
    let kzz = kernels::kernel_value(&basis.spec, z, z)?;
    let proj: f64 = k.data().iter().zip(&alpha).map(|(a, b)| a * b).sum();
    Ok((kzz - proj).max(0.0))
}

/// Differentiable [`subspace_distance`] for every row of `z` (`[B x d]`),
/// returning `[B x 1]`.
pub fn subspace_distance_rows(tape: &mut Tape, z: Var, basis: &SubspaceBasis) -> Result<Var> {
    let (_, d) = tape.value(z).dims2()?;
    basis.check_dim(d)?;
    let pts = tape.constant(basis.points.clone());
    let kx = kernels::cross_kernel_rows(tape, &basis.spec, z, pts)?;
    let kx_t = tape.transpose(kx)?;
    let alpha = tape.solve_factored(basis.factor.clone(), kx_t)?;
    let alpha_t = tape.transpose(alpha)?;
    let prod = tape.mul(kx, alpha_t)?;
    let proj = tape.sum_rows(prod)?;
    // k(z, z) = 1 for both RBF families.
    let delta = tape.affine(proj, -1.0, 1.0)?;
    tape.clamp(delta, 0.0, f64::INFINITY)
}

/// Loss value together with per-space diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct KdLoss {
    pub loss: Var,
    /// Batch mean of the Euclidean distances.
    pub euclidean: f64,
    /// Batch mean of the hyperbolic distances; `None` when `beta == 0`.
    pub hyperbolic: Option<f64>,
    pub euclidean_report: SpdSolveReport,
    pub hyperbolic_report: Option<SpdSolveReport>,
}

/// Distillation loss from projected embeddings.
///
/// `new_h` and `old_h` are head outputs read as tangent vectors at the
/// origin; both are mapped into the ball with `exp_0` before the
/// hyperbolic kernel.
pub fn kd_loss_from_projections(
    tape: &mut Tape,
    new_e: Var,
    new_h: Var,
    old_e: &Tensor,
    old_h: &Tensor,
    cfg: &DistillConfig,
) -> Result<KdLoss> {
    cfg.validate()?;
    let b_new = tape.value(new_e).rows();
    if b_new == 0 || b_new != old_e.rows() || tape.value(new_h).rows() != old_h.rows() || b_new != old_h.rows() {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            detail: format!(
                "new batch {} vs old batch {}",
                b_new,
                old_e.rows()
            ),
        });
    }

    let basis_e = SubspaceBasis::new(cfg.euclidean_kernel()?, old_e.clone())?;
    let delta_e = subspace_distance_rows(tape, new_e, &basis_e)?;
    let mean_e = tape.mean(delta_e)?;
    let euclidean = tape.value(mean_e).item().unwrap_or(0.0);

    if cfg.beta == 0.0 {
        return Ok(KdLoss {
            loss: mean_e,
            euclidean,
            hyperbolic: None,
            euclidean_report: basis_e.report(),
            hyperbolic_report: None,
        });
    }

    let c = cfg.curvature;
    let old_ball = old_h
        .iter_rows()
        .take(old_h.rows())
        .map(|r| manifold::exp0(r, c).map(|p| p.coords().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let basis_h = SubspaceBasis::new(cfg.hyperbolic_kernel()?, Tensor::from_rows(&old_ball)?)?;
    let new_ball = manifold::exp0_rows(tape, new_h, c)?;
    let delta_h = subspace_distance_rows(tape, new_ball, &basis_h)?;
    let mean_h = tape.mean(delta_h)?;
    let hyperbolic = tape.value(mean_h).item().unwrap_or(0.0);
    let weighted = tape.affine(mean_h, cfg.beta, 0.0)?;
    let loss = tape.add(mean_e, weighted)?;
    Ok(KdLoss {
        loss,
        euclidean,
        hyperbolic: Some(hyperbolic),
        euclidean_report: basis_e.report(),
        hyperbolic_report: Some(basis_h.report()),
    })
}

/// The projection heads of the live model (on the tape) and of the frozen
/// previous-task model.
pub struct ProjectionHeads<'a> {
    pub live: &'a BoundModel,
    pub old: &'a L3Model,
}

/// Distillation loss between live features `[B x D]` (tracked) and the old
/// model's features for the same batch (constant).
pub fn kd_loss(
    tape: &mut Tape,
    z_new_feat: Var,
    z_old_feat: &Tensor,
    heads: &ProjectionHeads<'_>,
    cfg: &DistillConfig,
) -> Result<KdLoss> {
    let b_new = tape.value(z_new_feat).rows();
    if b_new != z_old_feat.rows() {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            detail: format!("new batch {} vs old batch {}", b_new, z_old_feat.rows()),
        });
    }
    let new_e = heads.live.project_e(tape, z_new_feat)?;
    let old_e = heads.old.project_e(z_old_feat)?;
    if cfg.beta == 0.0 {
        let placeholder = tape.constant(old_e.clone());
        return kd_loss_from_projections(tape, new_e, placeholder, &old_e, &old_e, cfg);
    }
    let new_h = heads.live.project_h(tape, z_new_feat)?;
    let old_h = heads.old.project_h(z_old_feat)?;
    kd_loss_from_projections(tape, new_e, new_h, &old_e, &old_h, cfg)
}
