use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::tensor::{axpy, Tensor};

/// Compressed sparse row matrix with a constant value per stored entry.
///
/// Column indices within a row are kept sorted so products are summed in a
/// fixed order (bitwise-reproducible results).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| self.values[span.start + k])
    }

    /// `self · x` for a dense `cols × d` matrix.
    pub fn spmm(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.rows(), self.cols, "spmm inner dimension");
        let d = x.cols();
        let mut out = Tensor::zeros(&[self.rows, d]);
        let od = out.data_mut();
        for r in 0..self.rows {
            let dst = &mut od[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                axpy(v, x.row(c), dst);
            }
        }
        out
    }

    /// `selfᵀ · g` for a dense `rows × d` matrix.
    pub fn t_spmm(&self, g: &Tensor<T>) -> Tensor<T> {
        assert_eq!(g.rows(), self.rows, "t_spmm inner dimension");
        let d = g.cols();
        let mut out = Tensor::zeros(&[self.cols, d]);
        let od = out.data_mut();
        for r in 0..self.rows {
            let src = g.row(r);
            for (c, v) in self.row(r) {
                axpy(v, src, &mut od[c * d..(c + 1) * d]);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }
}
