//! Dense tensors and a tape-based reverse-mode autodiff engine.

mod element;
mod gradcheck;
pub mod kernels;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use element::Element;
pub use gradcheck::{grad_check, relative_error, GradCheck, ScalarFn};
pub use tape::{AttentionShape, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
