//! Dense row-major tensors.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::GraphError;

/// Scalar element type of a [`Tensor`].
///
/// Implemented for `f32` (storage precision used throughout the pipeline)
/// and `f64` (used when replaying a graph for finite-difference checks).
pub trait Real: Float + Default + Debug + Send + Sync + Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a x b + beta * c` for an `m x k` by `k x n` product, with
    /// arbitrary row and column strides (in elements).
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: [isize; 2], b: &[Self], b_strides: [isize; 2], beta: Self, c: &mut [Self], c_stride: isize);
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], [rsa, csa]: [isize; 2], b: &[f32], [rsb, csb]: [isize; 2], beta: f32, c: &mut [f32], rsc: isize) {
        check_gemm(m, k, n, a.len(), [rsa, csa], b.len(), [rsb, csb], c.len(), rsc);
        // SAFETY: check_gemm verified every strided access stays in bounds.
        unsafe { matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1) }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], [rsa, csa]: [isize; 2], b: &[f64], [rsb, csb]: [isize; 2], beta: f64, c: &mut [f64], rsc: isize) {
        check_gemm(m, k, n, a.len(), [rsa, csa], b.len(), [rsb, csb], c.len(), rsc);
        // SAFETY: check_gemm verified every strided access stays in bounds.
        unsafe { matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1) }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm(m: usize, k: usize, n: usize, la: usize, sa: [isize; 2], lb: usize, sb: [isize; 2], lc: usize, rsc: isize) {
    let last = |rows: usize, cols: usize, s: [isize; 2]| {
        assert!(s[0] >= 0 && s[1] >= 0, "negative stride");
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s[0] as usize + (cols - 1) * s[1] as usize + 1
        }
    };
    assert!(last(m, k, sa) <= la, "gemm: left operand out of bounds");
    assert!(last(k, n, sb) <= lb, "gemm: right operand out of bounds");
    assert!(last(m, n, [rsc, 1]) <= lc, "gemm: output out of bounds");
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, GraphError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GraphError::BadTensor {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, GraphError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(GraphError::BadTensor {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `other` element-wise into `self`.
    pub fn accumulate(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}
