//! Dense tensors, a reverse-mode tape, and the Adam optimizer.
//!
//! Forward code records onto a [`Tape`] through [`Var`] handles; a single
//! reverse sweep ([`Tape::backward`]) yields [`Gradients`] that modules fold
//! into their [`Param`]s before an [`AdamState`] update.

mod adam;
pub mod gradcheck;
mod kernels;
mod param;
mod scalar;
mod tape;
mod dense;

pub use adam::AdamState;
pub use dense::Tensor;
pub use kernels::{col2im, down_size, im2col};
pub use param::{Module, Param, ParamId};
pub use scalar::Scalar;
pub use tape::{inject_backward_fault, Gradients, Tape, Var};

