//! Differentiable building blocks: convolution (plain and deformable),
//! layer normalization, GELU, bilinear sampling, pixel shuffle and bilinear
//! upsampling.
//!
//! Every kernel has a plain [`Tensor`](crate::Tensor) entry point and a
//! method on [`Var`](crate::Var) that records it for differentiation.

mod conv;
mod deform;
mod norm;
mod resize;
mod shuffle;

pub use conv::{conv2d, conv3d, ConvSpec};
pub use deform::{bilinear_sample, deformable_conv2d, deformable_conv3d};
pub use norm::layer_norm;
pub use resize::upsample_bilinear;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: &crate::Tensor) -> crate::Tensor {
    x.map(crate::autograd::gelu_scalar)
}
