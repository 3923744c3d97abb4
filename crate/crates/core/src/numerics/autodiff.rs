//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and accumulates `d loss / d leaf` into each
//! tracked leaf. Gradients accumulate across calls until `zero_grad`.
//!
//! Binary elementwise operations broadcast their right operand when it is
//! `[rows x 1]`, `[1 x cols]` or a single value; no other broadcasting exists.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::linalg::{self, CholeskyFactor, SpdSolveReport};
use crate::numerics::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Col,
    Row,
    Scalar,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Exp,
    Tanh,
    Atanh,
    Relu,
    Recip,
    Sqrt,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var, Bcast),
    Unary(Unary, Var),
    Affine { x: Var, scale: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RowNorm { x: Var, floor: f64 },
    LogSumExpRows(Var),
    GatherCols { x: Var, idx: Vec<usize> },
    PairwiseSqDist(Var, Var),
    ProjectRows { x: Var, max_norm: f64 },
    SpdSolve { k: Var, b: Var, factor: Arc<CholeskyFactor> },
    FactoredSolve { b: Var, factor: Arc<CholeskyFactor> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A tracked input whose gradient `backward` will populate.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (r, c) = av.dims2()?;
        let (br, bc) = bv.dims2()?;
        let mode = if (br, bc) == (r, c) {
            Bcast::Same
        } else if (br, bc) == (r, 1) {
            Bcast::Col
        } else if (br, bc) == (1, c) {
            Bcast::Row
        } else if br * bc == 1 {
            Bcast::Scalar
        } else {
            return Err(mismatch(name, format!("[{r}x{c}] with [{br}x{bc}]")));
        };
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let x = ad[i * c + j];
                let y = bd[bidx(mode, i, j, c)];
                out.push(match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                });
            }
        }
        check_finite(name, &out)?;
        let shape = av.shape().to_vec();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Binary(kind, a, b, mode), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let (name, f): (&'static str, fn(f64) -> f64) = match kind {
            Unary::Exp => ("exp", f64::exp),
            Unary::Tanh => ("tanh", f64::tanh),
            Unary::Atanh => ("atanh", f64::atanh),
            Unary::Relu => ("relu", |v| v.max(0.0)),
            Unary::Recip => ("recip", |v| 1.0 / v),
            Unary::Sqrt => ("sqrt", f64::sqrt),
        };
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        check_finite(name, &out)?;
        let shape = xv.shape().to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Unary(kind, x), tracked))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn atanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Atanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Recip, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = xv.data().iter().map(|&v| scale * v + shift).collect();
        check_finite("affine", &out)?;
        let shape = xv.shape().to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Affine { x, scale }, tracked))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    /// Clamps into `[lo, hi]`; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = xv.data().iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = xv.shape().to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Clamp { x, lo, hi }, tracked))
    }

    // ---- matrix ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = linalg::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        check_finite("matmul", out.data())?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].value.transpose()?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(out, Op::Transpose(x), tracked))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        check_finite("sum", &[s])?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(Vec::new(), vec![s]), Op::Sum(x), tracked))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        check_finite("mean", &[s])?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(Vec::new(), vec![s]), Op::Mean(x), tracked))
    }

    /// Per-row sum, `[r x c] -> [r x 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, _) = xv.dims2()?;
        let out: Vec<f64> = xv.iter_rows().take(r).map(|row| row.iter().sum()).collect();
        check_finite("sum_rows", &out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(vec![r, 1], out), Op::SumRows(x), tracked))
    }

    /// Per-row Euclidean norm floored at `floor`, `[r x c] -> [r x 1]`.
    /// Rows below the floor get a zero gradient.
    pub fn row_norm(&mut self, x: Var, floor: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, _) = xv.dims2()?;
        let out: Vec<f64> = xv
            .iter_rows()
            .take(r)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt().max(floor))
            .collect();
        check_finite("row_norm", &out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(vec![r, 1], out), Op::RowNorm { x, floor }, tracked))
    }

    /// Stable per-row `log(sum(exp(x)))`, `[r x c] -> [r x 1]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.dims2()?;
        if c == 0 {
            return Err(Error::InvalidArgument("logsumexp over zero columns".into()));
        }
        let out: Vec<f64> = xv
            .iter_rows()
            .take(r)
            .map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        check_finite("logsumexp_rows", &out)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(vec![r, 1], out), Op::LogSumExpRows(x), tracked))
    }

    /// Picks `x[i, idx[i]]` for every row, `[r x c] -> [r x 1]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.dims2()?;
        if idx.len() != r {
            return Err(mismatch("gather_cols", format!("{} indices for {} rows", idx.len(), r)));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::InvalidArgument(format!("column {bad} out of range for {c} columns")));
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| xv.data()[i * c + j]).collect();
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![r, 1], out),
            Op::GatherCols { x, idx: idx.to_vec() },
            tracked,
        ))
    }

    // ---- structured --------------------------------------------------

    /// Squared Euclidean distances between the rows of `a` (`[r x d]`) and
    /// `b` (`[m x d]`), `-> [r x m]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (r, d) = av.dims2()?;
        let (m, d2) = bv.dims2()?;
        if d != d2 {
            return Err(mismatch("pairwise_sq_dist", format!("[{r}x{d}] vs [{m}x{d2}]")));
        }
        let mut out = Vec::with_capacity(r * m);
        for ra in av.iter_rows().take(r) {
            for rb in bv.iter_rows().take(m) {
                out.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        check_finite("pairwise_sq_dist", &out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![r, m], out), Op::PairwiseSqDist(a, b), tracked))
    }

    /// Radially rescales any row whose norm reaches `max_norm` onto the
    /// sphere of radius `max_norm`.
    pub fn project_rows(&mut self, x: Var, max_norm: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.dims2()?;
        let mut out = xv.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n >= max_norm && n > 0.0 {
                let s = max_norm / n;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let shape = xv.shape().to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ProjectRows { x, max_norm }, tracked))
    }

    /// Solves `(sym(K) + ridge I) X = B`, differentiable in both `K` and `B`.
    pub fn spd_solve(&mut self, k: Var, b: Var) -> Result<(Var, SpdSolveReport)> {
        let (factor, report) = linalg::factor_spd(&self.nodes[k.0].value)?;
        let out = factor.solve(&self.nodes[b.0].value)?;
        let tracked = self.tracked(&[k, b]);
        let factor = Arc::new(factor);
        Ok((self.push(out, Op::SpdSolve { k, b, factor }, tracked), report))
    }

    /// Solves against a fixed, pre-factorized matrix; only `b` carries gradient.
    pub fn solve_factored(&mut self, factor: Arc<CholeskyFactor>, b: Var) -> Result<Var> {
        let out = factor.solve(&self.nodes[b.0].value)?;
        let tracked = self.tracked(&[b]);
        Ok(self.push(out, Op::FactoredSolve { b, factor }, tracked))
    }

    // ---- backward ----------------------------------------------------

    /// Accumulates `d loss / d leaf` into every tracked leaf reachable from
    /// `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::InvalidLoss(format!("shape {:?} is not scalar", node.value.shape())));
        }
        if !node.requires_grad {
            return Err(Error::InvalidLoss("loss does not depend on any tracked leaf".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.grads[idx];
                match slot {
                    Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            self.propagate(idx, &g, &mut adj)?;
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let want = |v: Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b, mode) => {
                let (r, c) = val(*a).dims2()?;
                let ad = val(*a).data();
                let bd = val(*b).data();
                if want(*a) {
                    let ga: Vec<f64> = (0..r * c)
                        .map(|k| {
                            let bv = bd[bidx(*mode, k / c, k % c, c)];
                            match kind {
                                Binary::Add | Binary::Sub => g[k],
                                Binary::Mul => g[k] * bv,
                                Binary::Div => g[k] / bv,
                            }
                        })
                        .collect();
                    accumulate(adj, *a, &ga);
                }
                if want(*b) {
                    let mut gb = vec![0.0; bd.len()];
                    for k in 0..r * c {
                        let bi = bidx(*mode, k / c, k % c, c);
                        gb[bi] += match kind {
                            Binary::Add => g[k],
                            Binary::Sub => -g[k],
                            Binary::Mul => g[k] * ad[k],
                            Binary::Div => -g[k] * ad[k] / (bd[bi] * bd[bi]),
                        };
                    }
                    accumulate(adj, *b, &gb);
                }
            }
            Op::Unary(kind, x) => {
                let xd = val(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(xd.iter().zip(y))
                    .map(|(&g, (&x, &y))| match kind {
                        Unary::Exp => g * y,
                        Unary::Tanh => g * (1.0 - y * y),
                        Unary::Atanh => g / (1.0 - x * x),
                        Unary::Relu => {
                            if x > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        Unary::Recip => -g * y * y,
                        Unary::Sqrt => g * 0.5 / y,
                    })
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::Affine { x, scale } => {
                let gx: Vec<f64> = g.iter().map(|v| v * scale).collect();
                accumulate(adj, *x, &gx);
            }
            Op::Clamp { x, lo, hi } => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { 0.0 })
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let (_, n) = val(*b).dims2()?;
                if want(*a) {
                    // dA = G B^T
                    let bt = val(*b).transpose()?;
                    let mut ga = vec![0.0; m * k];
                    linalg::matmul_into(g, bt.data(), &mut ga, m, n, k);
                    accumulate(adj, *a, &ga);
                }
                if want(*b) {
                    // dB = A^T G
                    let at = val(*a).transpose()?;
                    let mut gb = vec![0.0; k * n];
                    linalg::matmul_into(at.data(), g, &mut gb, k, m, n);
                    accumulate(adj, *b, &gb);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = node.value.dims2()?;
                let gt = Tensor::from_parts(vec![r, c], g.to_vec()).transpose()?;
                accumulate(adj, *x, gt.data());
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; val(*x).numel()];
                accumulate(adj, *x, &gx);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                let gx = vec![g[0] / n as f64; n];
                accumulate(adj, *x, &gx);
            }
            Op::SumRows(x) => {
                let (r, c) = val(*x).dims2()?;
                let gx: Vec<f64> = (0..r * c).map(|k| g[k / c]).collect();
                accumulate(adj, *x, &gx);
            }
            Op::RowNorm { x, floor } => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let n = y[i];
                    let raw: f64 = xv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if raw > *floor {
                        for j in 0..c {
                            gx[i * c + j] = g[i] * xv.data()[i * c + j] / n;
                        }
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::LogSumExpRows(x) => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[i] * (xv.data()[i * c + j] - y[i]).exp();
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::GatherCols { x, idx } => {
                let (r, c) = val(*x).dims2()?;
                let mut gx = vec![0.0; r * c];
                for (i, &j) in idx.iter().enumerate() {
                    gx[i * c + j] = g[i];
                }
                accumulate(adj, *x, &gx);
            }
            Op::PairwiseSqDist(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let (r, d) = av.dims2()?;
                let (m, _) = bv.dims2()?;
                let mut ga = vec![0.0; r * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..r {
                    for j in 0..m {
                        let gij = 2.0 * g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = av.data()[i * d + k] - bv.data()[j * d + k];
                            ga[i * d + k] += gij * diff;
                            gb[j * d + k] -= gij * diff;
                        }
                    }
                }
                if want(*a) {
                    accumulate(adj, *a, &ga);
                }
                if want(*b) {
                    accumulate(adj, *b, &gb);
                }
            }
            Op::ProjectRows { x, max_norm } => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let mut gx = g.to_vec();
                for i in 0..r {
                    let row = xv.row(i);
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n >= *max_norm && n > 0.0 {
                        let gi = &g[i * c..(i + 1) * c];
                        let dot: f64 = row.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>() / n;
                        let s = max_norm / n;
                        for j in 0..c {
                            gx[i * c + j] = s * (gi[j] - row[j] / n * dot);
                        }
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::SpdSolve { k, b, factor } => {
                let shape = node.value.shape().to_vec();
                let gy = factor.solve(&Tensor::from_parts(shape, g.to_vec()))?;
                if want(*b) {
                    accumulate(adj, *b, gy.data());
                }
                if want(*k) {
                    // dK_sym = -Y X^T, folded back through the symmetrization.
                    let (n, p) = node.value.dims2()?;
                    let mut gk = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            let mut s = 0.0;
                            for q in 0..p {
                                s += gy.data()[i * p + q] * y[j * p + q];
                            }
                            gk[i * n + j] -= 0.5 * s;
                            gk[j * n + i] -= 0.5 * s;
                        }
                    }
                    accumulate(adj, *k, &gk);
                }
            }
            Op::FactoredSolve { b, factor } => {
                let shape = node.value.shape().to_vec();
                let gy = factor.solve(&Tensor::from_parts(shape, g.to_vec()))?;
                accumulate(adj, *b, gy.data());
            }
        }
        Ok(())
    }
}

fn bidx(mode: Bcast, i: usize, j: usize, cols: usize) -> usize {
    match mode {
        Bcast::Same => i * cols + j,
        Bcast::Col => i,
        Bcast::Row => j,
        Bcast::Scalar => 0,
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
