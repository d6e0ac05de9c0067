//! Reverse-mode differentiation over a per-forward-pass tape.

mod gradcheck;
pub(crate) mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_coords};
pub(crate) use ops::{gelu_scalar, sigmoid_scalar as sigmoid};
pub use tape::{Gradients, Tape, Var};
