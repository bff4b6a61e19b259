//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse. Only scalar-times-tensor and row-bias broadcasting
//! are supported.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradient, grad_check, numeric_gradient, ScalarFn};
pub use tape::{CustomBackward, Gradients, Tape, TapeNode, Var, MIN_ROW_NORM};
pub use tensor::Tensor;
