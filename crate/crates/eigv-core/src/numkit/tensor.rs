//! Dense row-major tensors.
//!
//! Only ranks 1 and 2 appear in this system: vectors (question embeddings,
//! attention rows, logits) and matrices (clip sequences, weights). Scalars
//! are represented as single-element vectors so that losses stay ordinary
//! tensors. The invariant enforced at every public construction site is that
//! all entries are finite — NaN or infinity anywhere is a contract violation
//! and is reported as an error instead of propagating.

use crate::error::{Error, Result};
use crate::numkit::scalar::Scalar;

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape(
                "tensor::new",
                format!("rank must be 1 or 2, got shape {shape:?}"),
            ));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "tensor::new",
                format!("shape {shape:?} wants {expect} elements, got {}", data.len()),
            ));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("tensor::new")?;
        Ok(t)
    }

    /// Internal constructor for operator outputs whose inputs were already
    /// validated. Skips the finiteness scan; boundaries re-check.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    /// Single-element tensor. Losses and dot products have this shape.
    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a tensor by calling `f` once per element, in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut() -> T) -> Self {
        let count = shape.iter().product();
        let data: Vec<T> = (0..count).map(|_| f()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Glorot/Xavier-uniform weight matrix: entries uniform in
    /// `±sqrt(6 / (rows + cols))`, the usual variance-preserving range for
    /// layers read row-in, column-out.
    pub fn xavier(rows: usize, cols: usize, rng: &mut crate::numkit::rng::RngStream) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<T> = (0..rows * cols)
            .map(|_| T::from_f64((rng.uniform01() * 2.0 - 1.0) * limit))
            .collect();
        Tensor::from_parts(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count. Panics if the tensor is not a matrix.
    pub fn rows(&self) -> usize {
        assert!(self.is_matrix(), "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Column count. Panics if the tensor is not a matrix.
    pub fn cols(&self) -> usize {
        assert!(self.is_matrix(), "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of the single element of a scalar tensor.
    ///
    /// Panics if the tensor has more than one element.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    #[inline]
    pub fn get2(&self, r: usize, c: usize) -> T {
        debug_assert!(self.is_matrix());
        self.data[r * self.shape[1] + c]
    }

    /// Borrow row `r` of a matrix as a slice.
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Lossless-enough precision change via `f64` (exact for f32 → f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{context} (element {i} of shape {:?})", self.shape),
                });
            }
        }
        Ok(())
    }

    /// Largest absolute element-wise difference, in `f64`.
    ///
    /// Panics if shapes differ; intended for tests and verification code.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}
