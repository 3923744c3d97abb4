//! Dense tensors, small linear algebra and reverse-mode differentiation.

pub mod autodiff;
pub mod gradcheck;
pub mod linalg;
mod tensor;

pub use autodiff::{Tape, Var};
pub use linalg::{matmul, spd_solve, CholeskyFactor, SpdSolveReport, RIDGE_LADDER};
pub use tensor::Tensor;
