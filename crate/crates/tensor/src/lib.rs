//! Dense `f32` tensors (with an `f64` mode for numerical checks) and
//! reverse-mode differentiation.
//!
//! Operations run eagerly on contiguous row-major buffers and record a graph
//! when any input requires a gradient. Backward rules are themselves built
//! from differentiable operations, so gradients can be differentiated again
//! (see [`grad`] with `create_graph`), which is what input-gradient penalties
//! need.

mod autograd;
mod conv;
mod elem;
mod error;
pub mod functional;
pub mod gradcheck;
mod ops;
mod param;
mod shape;
mod tensor;

pub use autograd::grad;
pub use elem::DType;
pub use error::{Result, TensorError};
pub use ops::Activation;
pub use param::Parameter;
pub use shape::{broadcast_shapes, numel};
pub use tensor::{is_grad_enabled, no_grad, Tensor, TensorId};

/// Default epsilon for instance normalization.
pub const INSTANCE_NORM_EPS: f32 = 1e-5;
