//! Reverse-mode autodiff, the Adam optimizer and the learning-rate
//! schedule.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;

pub use graph::{Graph, NodeId};
pub use optim::{linear_lr, Adam};

use crate::tensor::{Scalar, Tensor};

/// Elementwise exact-erf GELU over a plain tensor.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::gelu_scalar)
}
