//! Optical flow estimation networks with attention gating and midway feature
//! fusion, a synthetic flow dataset generator with exact ground truth, and a
//! segment-consensus gesture recognition pipeline built on the estimated flow.
//!
//! Everything runs on a small self-contained reverse-mode autodiff core over
//! dense CPU arrays; `f32` is the training precision, `f64` the verification
//! precision. Start with the `examples/` directory for runnable tours of each
//! capability, or the `attflow` binary for the command-line interface.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gesture;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use autodiff::{Graph, Scalar, Shape, Tensor, Var};
pub use data::FlowField;
pub use error::{Error, Result};
