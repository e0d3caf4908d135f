//! Dense row-major tensors and the numeric kernels used by every layer type.
//!
//! All reductions inside kernels run in a fixed left-to-right order so that
//! two invocations on identical inputs produce bit-identical outputs.

mod grad;
mod ops;

pub use grad::{finite_difference_grad, max_relative_error};
pub use ops::{
    add_row_bias, column_sums, conv2d_same, conv2d_same_backward, cross_entropy, matmul,
    matmul_at_b, maxpool_2x2, maxpool_2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    softmax, transpose, ConvGrads, PoolMap, CONV_WINDOW,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use thiserror::Error;

use crate::comm::WireElement;

/// Errors raised by tensor construction and kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: input has {input} channels but kernels expect {kernel}")]
    ChannelMismatch {
        op: &'static str,
        input: usize,
        kernel: usize,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
}

/// Real element type of a tensor: `f64` (default) or `f32`.
pub trait Scalar:
    Float + NumAssign + Default + Debug + Display + Send + Sync + Sum + WireElement + 'static
{
    /// Bytes per element.
    const WIDTH: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Raw bits widened to u64, used for hashing and bit-exact comparison.
    fn bits(self) -> u64;
}

impl Scalar for f64 {
    const WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

impl Scalar for f32 {
    const WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

/// Dense n-dimensional array stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: "extents must be positive",
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor extents must be positive: {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent, i.e. the batch or sample count.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Copies the given rows, in order, into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, TensorError> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= self.rows() {
                return Err(TensorError::InvalidShape {
                    op: "select_rows",
                    shape: self.shape.clone(),
                    reason: "row index out of range",
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    /// Contiguous rows `start..start + count`.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        if start + count > self.rows() {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                shape: self.shape.clone(),
                reason: "row range out of bounds",
            });
        }
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Self::new(shape, self.data[start * w..(start + count) * w].to_vec())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f64; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0f64; 5]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 0], vec![]),
            Err(TensorError::InvalidShape { .. })
        ));
    }

    #[test]
    fn row_helpers() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(t.row(1), &[2.0, 3.0]);
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
        let c = t.slice_rows(1, 2).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(t.slice_rows(2, 2).is_err());
    }

    #[test]
    fn cast_round_trips_small_integers() {
        let t = Tensor::from_fn(&[4], |i| i as f64);
        let back: Tensor<f64> = t.cast::<f32>().cast();
        assert_eq!(t, back);
    }
}
