//! Small dense linear algebra: matrix product and symmetric positive-definite
//! solves through a Cholesky factor with a ridge fallback.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Diagonal shifts tried, in order, until a Cholesky factorization succeeds.
pub const RIDGE_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Outcome of factorizing a (possibly regularized) SPD matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdSolveReport {
    /// Diagonal shift that was needed; zero when the matrix factorized as is.
    pub ridge_added: f64,
    /// Cheap estimate `(max L_ii / min L_ii)^2` of the condition number.
    pub condition_estimate: f64,
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("[{m}x{k}] * [{k2}x{n}]"),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out += a * b` on raw row-major buffers.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorizes a symmetric matrix given as a row-major buffer. Returns
    /// `None` when a pivot is not strictly positive.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn condition_estimate(&self) -> f64 {
        let diag = (0..self.n).map(|i| self.l[i * self.n + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if self.n == 0 {
            1.0
        } else {
            (hi / lo).powi(2)
        }
    }

    /// Solves `A x = b` for a single right-hand side in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[i * n + p] * b[p];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= self.l[p * n + i] * b[p];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A X = B` column by column; `B` is `[n x p]`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let (rows, p) = b.dims2()?;
        if rows != self.n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve",
                detail: format!("factor of order {} with rhs of {} rows", self.n, rows),
            });
        }
        let mut out = vec![0.0; rows * p];
        let mut col = vec![0.0; rows];
        for j in 0..p {
            for i in 0..rows {
                col[i] = b.data()[i * p + j];
            }
            self.solve_in_place(&mut col);
            for i in 0..rows {
                out[i * p + j] = col[i];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "cholesky_solve" });
        }
        Ok(Tensor::from_parts(vec![rows, p], out))
    }
}

/// Symmetrizes `k` as `(K + K^T)/2` and factorizes it, escalating through
/// [`RIDGE_LADDER`] until a factor exists.
pub fn factor_spd(k: &Tensor) -> Result<(CholeskyFactor, SpdSolveReport)> {
    let (n, n2) = k.dims2()?;
    if n != n2 {
        return Err(Error::ShapeMismatch {
            op: "spd_solve",
            detail: format!("matrix is {n}x{n2}, not square"),
        });
    }
    let d = k.data();
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (d[i * n + j] + d[j * n + i]);
        }
    }
    let mut shifted = sym.clone();
    for &ridge in &RIDGE_LADDER {
        for i in 0..n {
            shifted[i * n + i] = sym[i * n + i] + ridge;
        }
        if let Some(f) = CholeskyFactor::factor(&shifted, n) {
            let report = SpdSolveReport {
                ridge_added: ridge,
                condition_estimate: f.condition_estimate(),
            };
            return Ok((f, report));
        }
    }
    Err(Error::NotPositiveDefinite {
        max_ridge: RIDGE_LADDER[RIDGE_LADDER.len() - 1],
    })
}

/// Solves `(sym(K) + ridge I) x = b` with the smallest workable ridge.
pub fn spd_solve(k: &Tensor, b: &Tensor) -> Result<(Tensor, SpdSolveReport)> {
    let (factor, report) = factor_spd(k)?;
    Ok((factor.solve(b)?, report))
}
