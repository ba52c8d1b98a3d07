//! Dense real tensors with reverse-mode differentiation.
//!
//! The engine is a flat tape of nodes. Every operation computes its forward
//! value eagerly and records a backward closure; [`Tape::backward`] replays
//! the closures in reverse, accumulating gradients per node. Element type is
//! selectable: `f32` for speed, `f64` for finite-difference verification.

mod check;
mod ops;
mod tape;

pub use check::{grad_check, grad_check_subset, GradCheckReport};
pub use tape::{Tape, Var};

use ndarray::{ArrayView2, ArrayViewMut2};
use thiserror::Error;

/// Element type usable by the engine: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + rustfft::FftNum
    + std::fmt::Display
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}
impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} on {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} incompatible with {} values",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Self {
        Tensor::from_vec(shape, data.iter().map(|&x| T::of_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} elements", self.data.len());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of_f64(x.as_f64())).collect(),
        }
    }

    /// 2-D ndarray view; the tensor must be rank 2.
    pub fn view2(&self) -> ArrayView2<'_, T> {
        assert_eq!(self.shape.len(), 2);
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).unwrap()
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, T> {
        assert_eq!(self.shape.len(), 2);
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data).unwrap()
    }

    /// Rank-2 view of an arbitrary tensor with the leading axes flattened.
    pub fn view2_as(&self, rows: usize, cols: usize) -> ArrayView2<'_, T> {
        assert_eq!(rows * cols, self.data.len());
        ArrayView2::from_shape((rows, cols), &self.data).unwrap()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = *a * s;
        }
    }

    pub fn sq_l2(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }
}

/// `out = a @ b` for row-major rank-2 tensors, accumulate optional.
pub(crate) fn matmul_into<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    ndarray::linalg::general_mat_mul(T::one(), &a.view2(), &b.view2(), beta, &mut out.view2_mut());
}
