//! Gaussian RBF kernels on the Euclidean and hyperbolic components.
//!
//! The hyperbolic kernel compares points through their tangent images at
//! the origin, `exp(-lambda |log_0(x) - log_0(y)|^2)`, which stays positive
//! definite where a geodesic-distance RBF would not.

use crate::error::{Error, Result};
use crate::manifold;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    EuclideanRbf,
    HyperbolicRbf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lambda: f64,
    curvature: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

impl KernelSpec {
    pub fn euclidean(lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        Ok(Self { family: KernelFamily::EuclideanRbf, lambda, curvature: 0.0 })
    }

    pub fn hyperbolic(lambda: f64, curvature: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        check_positive("curvature", curvature)?;
        Ok(Self { family: KernelFamily::HyperbolicRbf, lambda, curvature })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Ball curvature; zero for the Euclidean family.
    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// The flat coordinates the RBF is evaluated on.
    fn embed(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self.family {
            KernelFamily::EuclideanRbf => Ok(z.to_vec()),
            KernelFamily::HyperbolicRbf => manifold::log0(z, self.curvature),
        }
    }

    fn embed_rows(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        match self.family {
            KernelFamily::EuclideanRbf => Ok(z),
            KernelFamily::HyperbolicRbf => manifold::log0_rows(tape, z, self.curvature),
        }
    }

    fn rbf(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-self.lambda * d2).exp()
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left: a, right: b })
    }
}

pub fn kernel_value(spec: &KernelSpec, zi: &[f64], zj: &[f64]) -> Result<f64> {
    same_dim(zi.len(), zj.len())?;
    Ok(spec.rbf(&spec.embed(zi)?, &spec.embed(zj)?))
}

/// `K[i][j] = k(Z_i, Z_j)`, each unordered pair evaluated once.
pub fn gram_matrix(spec: &KernelSpec, z: &Tensor) -> Result<Tensor> {
    let (m, _) = z.dims2()?;
    if m == 0 {
        return Err(Error::InvalidArgument("gram matrix of zero points".into()));
    }
    let emb = z.iter_rows().take(m).map(|r| spec.embed(r)).collect::<Result<Vec<_>>>()?;
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        k[i * m + i] = 1.0;
        for j in 0..i {
            let v = spec.rbf(&emb[i], &emb[j]);
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    Tensor::matrix(m, m, k)
}

/// `k_zZ[i] = k(z, Z_i)` as an `[m]` vector.
pub fn cross_kernel(spec: &KernelSpec, z: &[f64], basis: &Tensor) -> Result<Tensor> {
    let (m, d) = basis.dims2()?;
    same_dim(z.len(), d)?;
    let ez = spec.embed(z)?;
    let out = basis
        .iter_rows()
        .take(m)
        .map(|r| Ok(spec.rbf(&ez, &spec.embed(r)?)))
        .collect::<Result<Vec<_>>>()?;
    Tensor::vector(out)
}

/// Differentiable cross-kernel between the rows of `z` (`[B x d]`) and the
/// rows of `basis` (`[m x d]`), `-> [B x m]`.
pub fn cross_kernel_rows(tape: &mut Tape, spec: &KernelSpec, z: Var, basis: Var) -> Result<Var> {
    let ez = spec.embed_rows(tape, z)?;
    let eb = spec.embed_rows(tape, basis)?;
    let d2 = tape.pairwise_sq_dist(ez, eb)?;
    let scaled = tape.affine(d2, -spec.lambda, 0.0)?;
    tape.exp(scaled)
}
