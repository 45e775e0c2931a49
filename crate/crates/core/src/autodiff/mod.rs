//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GRAD_CHECK_EPS};
pub use kernels::dot;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
