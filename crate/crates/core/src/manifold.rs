//! Poincaré-ball geometry with curvature `-c`.
//!
//! Two layers live here. The point-level API ([`BallPoint`],
//! [`mobius_add`], [`exp_map`], ...) works on plain coordinates. The `*_rows`
//! functions build the same maps on a [`Tape`], one point per row, so they can
//! sit inside a differentiable loss.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Radial margin kept between every produced point and the ball boundary,
/// measured in units of `sqrt(c) * |x|`.
pub const BALL_EPS: f64 = 1e-5;

/// Floor for norms used as denominators.
pub const NORM_FLOOR: f64 = 1e-15;

/// Tolerance for accepting points that sit on the `1 - BALL_EPS` shell up to round-off.
const SHELL_SLACK: f64 = 1e-12;

fn check_curvature(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("curvature must be positive, got {c}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest admissible Euclidean norm for curvature `c`.
pub fn max_norm(c: f64) -> f64 {
    (1.0 - BALL_EPS) / c.sqrt()
}

/// A point of the ball `{x : sqrt(c) |x| < 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    c: f64,
}

impl BallPoint {
    /// Wraps coordinates that already satisfy `sqrt(c)|x| <= 1 - BALL_EPS`.
    pub fn new(coords: Vec<f64>, c: f64) -> Result<Self> {
        check_curvature(c)?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "ball_point" });
        }
        let scaled = c.sqrt() * norm(&coords);
        if scaled > 1.0 - BALL_EPS + SHELL_SLACK {
            return Err(Error::OutsideBall { scaled_norm: scaled });
        }
        Ok(Self { coords, c })
    }

    pub fn origin(dim: usize, c: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], c)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    /// Additive inverse `-x`, which stays in the ball.
    pub fn negate(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|v| -v).collect(),
            c: self.c,
        }
    }

    fn compatible(&self, other: &BallPoint) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        if self.c != other.c {
            return Err(Error::CurvatureMismatch { left: self.c, right: other.c });
        }
        Ok(())
    }
}

/// A vector in the tangent space at `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    anchor: BallPoint,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>, anchor: BallPoint) -> Result<Self> {
        if coords.len() != anchor.dim() {
            return Err(Error::DimensionMismatch { left: coords.len(), right: anchor.dim() });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tangent_vector" });
        }
        Ok(Self { coords, anchor })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn anchor(&self) -> &BallPoint {
        &self.anchor
    }
}

/// Rescales `x` radially when `sqrt(c)|x| >= 1 - BALL_EPS`; otherwise passes it through.
pub fn project_to_ball(x: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "project_to_ball" });
    }
    let n = norm(x);
    let limit = max_norm(c);
    let coords = if n >= limit && n > 0.0 {
        let s = limit / n;
        x.iter().map(|v| v * s).collect()
    } else {
        x.to_vec()
    };
    Ok(BallPoint { coords, c })
}

fn mobius_raw(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = dot(x, x);
    let yy = dot(y, y);
    let cx = 1.0 + 2.0 * c * xy + c * yy;
    let cy = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    x.iter().zip(y).map(|(a, b)| (cx * a + cy * b) / den).collect()
}

/// Möbius addition `x (+)_c y`, re-projected into the ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    x.compatible(y)?;
    project_to_ball(&mobius_raw(&x.coords, &y.coords, x.c), x.c)
}

/// Geodesic distance `(2/sqrt(c)) atanh(sqrt(c) |(-x) (+)_c y|)`.
pub fn geodesic_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    let u = mobius_add(&x.negate(), y)?;
    let sc = x.c.sqrt();
    Ok(2.0 / sc * (sc * u.norm()).atanh())
}

/// `2 / (1 - c |v|^2)`.
pub fn conformal_factor(v: &BallPoint) -> f64 {
    2.0 / (1.0 - v.c * dot(&v.coords, &v.coords))
}

/// Logarithmic map of `x` into the tangent space at `anchor`.
pub fn log_map(anchor: &BallPoint, x: &BallPoint) -> Result<TangentVector> {
    let u = mobius_add(&anchor.negate(), x)?;
    let n = u.norm();
    let coords = if n == 0.0 {
        vec![0.0; anchor.dim()]
    } else {
        let sc = anchor.c.sqrt();
        let k = 2.0 / (sc * conformal_factor(anchor)) * (sc * n).atanh() / n.max(NORM_FLOOR);
        u.coords.iter().map(|v| k * v).collect()
    };
    TangentVector::new(coords, anchor.clone())
}

/// Exponential map of a tangent vector back onto the ball.
pub fn exp_map(v: &TangentVector) -> Result<BallPoint> {
    let anchor = &v.anchor;
    let n = norm(&v.coords);
    if n == 0.0 {
        return Ok(anchor.clone());
    }
    let sc = anchor.c.sqrt();
    let k = (sc * conformal_factor(anchor) * n / 2.0).tanh() / (sc * n.max(NORM_FLOOR));
    let w: Vec<f64> = v.coords.iter().map(|x| k * x).collect();
    let w = project_to_ball(&w, anchor.c)?;
    mobius_add(anchor, &w)
}

/// `exp_0^c(v) = tanh(sqrt(c)|v|) v / (sqrt(c)|v|)`, projected.
pub fn exp0(v: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    let n = norm(v);
    if n == 0.0 {
        return BallPoint::origin(v.len(), c);
    }
    let sc = c.sqrt();
    let k = (sc * n).tanh() / (sc * n);
    let w: Vec<f64> = v.iter().map(|x| k * x).collect();
    project_to_ball(&w, c)
}

/// `log_0^c(z) = atanh(sqrt(c)|z|) z / (sqrt(c)|z|)`.
pub fn log0(z: &[f64], c: f64) -> Result<Vec<f64>> {
    check_curvature(c)?;
    let n = norm(z);
    if n == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let sc = c.sqrt();
    if sc * n >= 1.0 {
        return Err(Error::OutsideBall { scaled_norm: sc * n });
    }
    let k = (sc * n).atanh() / (sc * n);
    Ok(z.iter().map(|x| k * x).collect())
}

// ---- differentiable, one point per row --------------------------------

/// Row-wise [`project_to_ball`].
pub fn project_rows(tape: &mut Tape, x: Var, c: f64) -> Result<Var> {
    check_curvature(c)?;
    tape.project_rows(x, max_norm(c))
}

/// Row-wise Möbius addition of two `[B x n]` batches.
pub fn mobius_add_rows(tape: &mut Tape, x: Var, y: Var, c: f64) -> Result<Var> {
    check_curvature(c)?;
    let xy = tape.mul(x, y)?;
    let xy = tape.sum_rows(xy)?;
    let xx = tape.mul(x, x)?;
    let xx = tape.sum_rows(xx)?;
    let yy = tape.mul(y, y)?;
    let yy = tape.sum_rows(yy)?;

    let two_cxy_1 = tape.affine(xy, 2.0 * c, 1.0)?;
    let c_yy = tape.affine(yy, c, 0.0)?;
    let coef_x = tape.add(two_cxy_1, c_yy)?;
    let coef_y = tape.affine(xx, -c, 1.0)?;
    let xx_yy = tape.mul(xx, yy)?;
    let c2_xx_yy = tape.affine(xx_yy, c * c, 0.0)?;
    let den = tape.add(two_cxy_1, c2_xx_yy)?;

    let left = tape.mul(x, coef_x)?;
    let right = tape.mul(y, coef_y)?;
    let num = tape.add(left, right)?;
    let out = tape.div(num, den)?;
    project_rows(tape, out, c)
}

/// Row-wise geodesic distance, `[B x 1]`.
pub fn geodesic_distance_rows(tape: &mut Tape, x: Var, y: Var, c: f64) -> Result<Var> {
    let neg_x = tape.neg(x)?;
    let u = mobius_add_rows(tape, neg_x, y, c)?;
    let n = tape.row_norm(u, NORM_FLOOR)?;
    let sc = c.sqrt();
    let s = tape.affine(n, sc, 0.0)?;
    let a = tape.atanh(s)?;
    tape.affine(a, 2.0 / sc, 0.0)
}

/// Row-wise conformal factor, `[B x 1]`.
pub fn conformal_factor_rows(tape: &mut Tape, x: Var, c: f64) -> Result<Var> {
    check_curvature(c)?;
    let xx = tape.mul(x, x)?;
    let xx = tape.sum_rows(xx)?;
    let den = tape.affine(xx, -c, 1.0)?;
    let inv = tape.recip(den)?;
    tape.affine(inv, 2.0, 0.0)
}

/// Row-wise `exp_0^c`, projected into the ball.
pub fn exp0_rows(tape: &mut Tape, v: Var, c: f64) -> Result<Var> {
    check_curvature(c)?;
    let sc = c.sqrt();
    let n = tape.row_norm(v, NORM_FLOOR)?;
    let s = tape.affine(n, sc, 0.0)?;
    let t = tape.tanh(s)?;
    let ratio = tape.div(t, s)?;
    let out = tape.mul(v, ratio)?;
    project_rows(tape, out, c)
}

/// Row-wise `log_0^c`.
pub fn log0_rows(tape: &mut Tape, z: Var, c: f64) -> Result<Var> {
    check_curvature(c)?;
    let sc = c.sqrt();
    let n = tape.row_norm(z, NORM_FLOOR)?;
    let s = tape.affine(n, sc, 0.0)?;
    let a = tape.atanh(s)?;
    let ratio = tape.div(a, s)?;
    tape.mul(z, ratio)
}

/// Row-wise `exp_x^c(v)` for anchors `x` and tangent vectors `v`.
pub fn exp_map_rows(tape: &mut Tape, x: Var, v: Var, c: f64) -> Result<Var> {
    let sc = c.sqrt();
    let lam = conformal_factor_rows(tape, x, c)?;
    let n = tape.row_norm(v, NORM_FLOOR)?;
    let lam_n = tape.mul(lam, n)?;
    let arg = tape.affine(lam_n, sc / 2.0, 0.0)?;
    let t = tape.tanh(arg)?;
    let sn = tape.affine(n, sc, 0.0)?;
    let ratio = tape.div(t, sn)?;
    let w = tape.mul(v, ratio)?;
    let w = project_rows(tape, w, c)?;
    mobius_add_rows(tape, x, w, c)
}

/// Row-wise `log_x^c(y)`.
pub fn log_map_rows(tape: &mut Tape, x: Var, y: Var, c: f64) -> Result<Var> {
    let sc = c.sqrt();
    let neg_x = tape.neg(x)?;
    let u = mobius_add_rows(tape, neg_x, y, c)?;
    let n = tape.row_norm(u, NORM_FLOOR)?;
    let s = tape.affine(n, sc, 0.0)?;
    let a = tape.atanh(s)?;
    let lam = conformal_factor_rows(tape, x, c)?;
    let lam_n = tape.mul(lam, n)?;
    let coef = tape.div(a, lam_n)?;
    let coef = tape.affine(coef, 2.0 / sc, 0.0)?;
    tape.mul(u, coef)
}
