//! Minimal reverse-mode autodiff over dense (B,C,H,W) arrays: a recording
//! graph with exactly the ops the flow networks need, plus finite-difference
//! verification utilities.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use graph::{Graph, Mode, Var};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
