//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitive operations in evaluation order; calling
//! [`Tape::backward`] on a scalar node returns [`Gradients`] for every node
//! on the tape. Broadcasting is limited to multiplication by a constant
//! ([`Tape::scale`]); everything else requires matching shapes.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

