use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{mismatch, Result};

/// Dense row-major tensor of rank ≤ 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(mismatch("tensor", &[n], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `rows × cols` matrix; panics if the lengths disagree.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![x],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
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

    /// Number of rows when viewed as a matrix (a vector is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Size of the trailing dimension.
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

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(mismatch("reshape", &[self.data.len()], &[n]));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn check_shape(&self, name: &str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(mismatch(name, expected, &self.shape));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).to_f64().abs())
            .fold(0.0, f64::max)
    }

    /// Adds `bias` (length = cols) to every row.
    pub fn add_row_vector(&self, bias: &Self) -> Self {
        let c = self.cols();
        assert_eq!(bias.len(), c, "bias length");
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// `self · other` for matrices (`n×k · k×m`).
    pub fn matmul(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = Self::zeros(&[n, m]);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::ZERO {
                    continue;
                }
                axpy(a, &other.data[p * m..(p + 1) * m], o_row);
            }
        }
        out
    }

    /// `self · otherᵀ` (`n×k · (m×k)ᵀ`).
    pub fn matmul_t(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_t inner dimension");
        let mut out = Self::zeros(&[n, m]);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                out.data[i * m + j] = dot(a_row, &other.data[j * k..(j + 1) * k]);
            }
        }
        out
    }

    /// `selfᵀ · other` (`(k×n)ᵀ · k×m`).
    pub fn t_matmul(&self, other: &Self) -> Self {
        let (k, n) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "t_matmul inner dimension");
        let mut out = Self::zeros(&[n, m]);
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::ZERO {
                    continue;
                }
                axpy(a, b_row, &mut out.data[i * m..(i + 1) * m]);
            }
        }
        out
    }

    /// Copies `len` columns starting at `start` out of every row.
    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        let (r, c) = (self.rows(), self.cols());
        assert!(start + len <= c, "slice_cols range");
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Tensor::matrix(r, len, data)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let c = self.cols();
        assert!(start + len <= self.rows(), "slice_rows range");
        Tensor::matrix(len, c, self.data[start * c..(start + len) * c].to_vec())
    }

    pub fn concat_rows(parts: &[&Self]) -> Self {
        let c = parts.first().map(|p| p.cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols(), c, "concat_rows width");
            data.extend_from_slice(&p.data);
            rows += p.rows();
        }
        Tensor::matrix(rows, c, data)
    }

    /// Gathers rows by index; `None` yields a zero row.
    pub fn gather_rows(&self, idx: &[Option<usize>]) -> Self {
        let c = self.cols();
        let mut data = vec![T::ZERO; idx.len() * c];
        for (dst, src) in idx.iter().enumerate() {
            if let Some(s) = *src {
                data[dst * c..(dst + 1) * c].copy_from_slice(self.row(s));
            }
        }
        Tensor::matrix(idx.len(), c, data)
    }

    /// Row-wise sum → vector of length cols.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![T::ZERO; c];
        for row in self.data.chunks_exact(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Tensor::vector(out)
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// `y += a·x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(xs[0], T::max);
    let mut total = T::ZERO;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// `ln Σ exp(x)` with max subtraction.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(xs[0], T::max);
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}
