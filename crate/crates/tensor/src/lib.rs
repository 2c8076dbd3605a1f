//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Tensors are row-major `f64` arrays (`NCHW` for images). Differentiable
//! computation goes through a [`Graph`], which records each primitive and
//! replays the record backwards in [`Graph::backward`].

mod error;
mod gradcheck;
mod graph;
mod linalg;
mod serialize;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{analytic_gradient, check_gradients, DEFAULT_EPS};
pub use graph::{Graph, OpKind, RecordEntry, Var};
pub use serialize::{read_u64, MAGIC, VERSION};
pub use tensor::Tensor;
