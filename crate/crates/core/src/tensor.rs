//! Dense row-major tensors and the handful of kernels the model needs.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::real::Real;

/// Norm floor used by every L2 normalization in the crate.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} elements, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: empty axis")]
    EmptyAxis { op: &'static str },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
}

/// Dense row-major array. `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        let t = Self {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("from_vec")?;
        Ok(t)
    }

    pub fn vector(data: Vec<T>) -> Result<Self, TensorError> {
        let n = data.len();
        Self::from_vec(&[n], data)
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix (or 1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count of a matrix (or the length of a vector).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, op: &'static str, other: &Self) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            r => Err(TensorError::InvalidAxis { op, axis: 1, rank: r }),
        }
    }

    pub fn transpose(&self) -> Result<Self, TensorError> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut out = Self::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// `self[M×K] · other[K×N]`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 || self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// `self[M×K] · other[N×K]ᵀ`, the layout used by `x · Wᵀ` layers.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.as_matrix("matmul_nt")?;
        let (n, k2) = other.as_matrix("matmul_nt")?;
        if k != k2 || other.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                out.data[i * n + j] = dot(a_row, &other.data[j * k..(j + 1) * k]);
            }
        }
        out.ensure_finite("matmul_nt")?;
        Ok(out)
    }

    /// `self[K×M]ᵀ · other[K×N]`, used for weight gradients.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, TensorError> {
        let (k, m) = self.as_matrix("matmul_tn")?;
        let (k2, n) = other.as_matrix("matmul_tn")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.ensure_finite("matmul_tn")?;
        Ok(out)
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Self, TensorError> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank,
            });
        }
        let len = self.shape[axis];
        if len == 0 {
            return Err(TensorError::EmptyAxis { op: "softmax" });
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.clone();
        let mut buf = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = self.data[base + t * inner];
                }
                softmax_in_place(&mut buf);
                for (t, b) in buf.iter().enumerate() {
                    out.data[base + t * inner] = *b;
                }
            }
        }
        Ok(out)
    }

    /// Whole-tensor L2 normalization: `x / max(‖x‖, 1e-12)`.
    pub fn l2_normalize(&self) -> Self {
        let mut out = self.clone();
        l2_normalize_in_place(&mut out.data);
        out
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place softmax of a non-empty slice.
pub fn softmax_in_place<T: Real>(x: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Backward of softmax: `dx_i = y_i (dy_i − Σ_j y_j dy_j)`.
pub fn softmax_backward<T: Real>(y: &[T], dy: &[T], dx: &mut [T]) {
    let s = dot(y, dy);
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (gi - s);
    }
}

/// Normalizes in place and returns the pre-normalization norm.
pub fn l2_normalize_in_place<T: Real>(x: &mut [T]) -> T {
    let n = norm(x);
    let denom = n.max(T::lit(NORM_EPS));
    for v in x.iter_mut() {
        *v /= denom;
    }
    n
}

/// Backward of `y = x / max(‖x‖, ε)` given the output `y` and the input norm.
///
/// Above the floor the Jacobian is `(I − y yᵀ) / ‖x‖`; below it the map is
/// linear with slope `1/ε`.
pub fn l2_normalize_backward<T: Real>(y: &[T], input_norm: T, dy: &[T], dx: &mut [T]) {
    let eps = T::lit(NORM_EPS);
    if input_norm > eps {
        let proj = dot(y, dy);
        for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
            *d = (gi - yi * proj) / input_norm;
        }
    } else {
        for (d, &gi) in dx.iter_mut().zip(dy) {
            *d = gi / eps;
        }
    }
}
