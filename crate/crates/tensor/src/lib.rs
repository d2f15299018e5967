//! Dense tensors with a small define-by-run autodiff engine.
//!
//! Only what the colorization networks need is provided: convolutions,
//! transposed convolutions, resampling, channel concat/slice and a handful
//! of elementwise ops. Custom differentiable kernels plug in through
//! [`Operation`].

mod error;
pub mod gradcheck;
mod graph;
mod ops;
mod optim;
mod param;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Operation, Var};
pub use ops::UpsampleMode;
pub use optim::{Adam, AdamConfig};
pub use param::{Binder, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
