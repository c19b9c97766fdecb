//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything in this workspace that needs a gradient goes through the
//! [`Tape`] in this crate: record ops during the forward pass, call
//! [`Tape::backward`] on a scalar node, read gradients per node. Tensors
//! are plain row-major `Vec<f64>` buffers; there is no broadcasting beyond
//! what the recorded ops need and no GPU path.
//!
//! Shape mismatches and other contract violations panic with a message
//! naming the offending shapes; recoverable errors are reserved for I/O.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_at};
pub use optim::{adam_step, rmsprop_step, OptimizerConfig, OptimizerKind, OptimizerState, Parameter};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{cross_entropy, softmax_with_temperature, Tensor, CE_CLAMP};
