//! Lightweight recurrent video super-resolution.
//!
//! A dense tensor core with reverse-mode differentiation, the convolutional
//! kernels the network needs (including deformable convolution and an
//! orthonormal Haar transform), the recurrent super-resolution model itself,
//! a synthetic degradation pipeline, quality and cost metrics, and a small
//! AdamW trainer.

pub mod autograd;
pub mod config;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod rng;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use autograd::{grad_check, grad_check_coords, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, PadMode, Tensor};
