//! Class-incremental learning with knowledge distillation through RKHS
//! subspace distances over a mixed-curvature (Euclidean + Poincaré ball)
//! embedding space.
//!
//! Module map:
//! - [`numerics`]: tensors, Cholesky solves, reverse-mode tape
//! - [`manifold`]: Poincaré-ball geometry
//! - [`kernels`]: Gaussian kernels on the flat and hyperbolic components
//! - [`distill`]: subspace distance and the combined distillation loss
//! - [`model`]: MLP backbone, projection heads, classifier, checkpoints
//! - [`continual`]: task streams, herding memory, training loop, metrics
//! - [`datasets`]: CSV/binary ingestion and synthetic generators

pub mod continual;
pub mod datasets;
pub mod distill;
pub mod error;
pub mod kernels;
pub mod manifold;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
