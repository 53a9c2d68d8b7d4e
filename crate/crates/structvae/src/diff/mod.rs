//! Differentiable computation: tensors, a reverse-mode tape, initializers,
//! the Adam optimizer, gradient clipping, and the learning-rate schedule.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{adam_step, clip_global_norm, learning_rate, OptimizerConfig};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{celu_capped_scalar, sigmoid_scalar, NodeId, Tape};
pub use tensor::{init, InitSpec, Tensor};
