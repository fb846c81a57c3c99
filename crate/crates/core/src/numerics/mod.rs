//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, ZERO_GRAD_TOL};
pub use tape::{DiffNode, Elementwise, Padding, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
