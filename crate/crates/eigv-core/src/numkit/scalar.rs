//! Floating-point abstraction for the numeric kernels.
//!
//! Training runs in `f32`; gradient verification re-runs the same code in
//! `f64` so that central finite differences have enough headroom to resolve
//! a 1e-4 relative tolerance. Everything numeric in this crate is generic
//! over [`Scalar`] to make that dual-precision story a type parameter rather
//! than a copy of the code.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Element type accepted by tensors, the tape, and the optimizer.
///
/// The two implementations are `f32` and `f64`. Conversions route through
/// `f64`, which is exact for every `f32` value.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    /// Human-readable name used in error messages and format headers.
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
