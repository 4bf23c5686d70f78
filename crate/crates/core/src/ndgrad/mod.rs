//! Dense reverse-mode differentiation over `f64` tensors.
//!
//! A [`Graph`] records operations on [`Var`] handles as they are evaluated;
//! [`Graph::backward`] then accumulates gradients into every node that
//! depends on a parameter leaf. [`adam_step`] consumes those gradients.

mod adam;
mod gemm;
mod graph;
pub mod special;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
