//! Numeric foundation: tensors, reverse-mode autodiff, samplers, optimizer.
//!
//! Everything the model code touches numerically lives here, generic over
//! [`Scalar`] so the same graph code runs in `f32` for training and `f64`
//! for gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tape::{Gradients, GumbelMode, Tape, Var};
pub use tensor::Tensor;
