//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an eager tape. Recording an op computes its value
//! immediately; [`Graph::backward`] then propagates a scalar loss back to every
//! [`Graph::param`] leaf. Graphs are cheap to build, so training records a
//! fresh one per minibatch.
//!
//! ```
//! use kneecast::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let x = g.input(Tensor::vector(vec![4.0, 5.0, 6.0]));
//! let wx = g.mul(w, x).unwrap();
//! let loss = g.mean(wx, None).unwrap();
//! let grads = g.backward(loss).unwrap();
//! // d mean(w * x) / dw = x / N
//! for (g, x) in grads.wrt(w).data().iter().zip([4.0, 5.0, 6.0]) {
//!     assert!((g - x / 3.0).abs() < 1e-15);
//! }
//! ```

mod check;
mod gemm;
mod graph;
mod tensor;

pub use check::{grad_check, relative_error, GradCheckReport};
pub use graph::{conv_same_geometry, Gradients, Graph, NodeId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
