//! Compressed sparse row matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are an
    /// error; explicit zeros are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &t {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = t.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            if v == 0.0 {
                continue;
            }
            indptr[i + 1] += 1;
            indices.push(j);
            values.push(v);
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), trip).expect("dense entries are unique")
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[s..e].binary_search(&j) {
            Ok(p) => self.values[s + p],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).fold(0.0, |acc, (_, v)| acc + v)).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        Self::from_triplets(
            self.n_cols,
            self.n_rows,
            self.triplets().map(|(i, j, v)| (j, i, v)),
        )
        .expect("transpose of a valid matrix is valid")
    }

    /// Returns `diag(left) · self · diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.values[p] = left[i] * self.values[p] * right[self.indices[p]];
            }
        }
        out
    }

    /// `self + s·I` for square matrices; diagonal entries are created when absent.
    pub fn add_diagonal(&self, s: f64) -> CsrMatrix {
        assert_eq!(self.n_rows, self.n_cols, "add_diagonal needs a square matrix");
        let mut trip: Vec<(usize, usize, f64)> = self.triplets().filter(|&(i, j, _)| i != j).collect();
        for i in 0..self.n_rows {
            trip.push((i, i, self.get(i, i) + s));
        }
        Self::from_triplets(self.n_rows, self.n_cols, trip).expect("unique after merge")
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && self
                .triplets()
                .all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    /// Sparse-dense product `self · x`.
    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if self.n_cols != x.rows() {
            return Err(Error::Shape {
                op: "sparse_dense_matmul",
                lhs: (self.n_rows, self.n_cols),
                rhs: x.shape(),
            });
        }
        let m = x.cols();
        let mut out = Matrix::zeros(self.n_rows, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, orow): (usize, &mut [f64])| {
            for (j, a) in self.row(i) {
                for (o, &b) in orow.iter_mut().zip(x.row(j)) {
                    *o += a * b;
                }
            }
        };
        if self.nnz() * m >= PAR_THRESHOLD {
            out.data_mut().par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data_mut().chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · x` without building the transpose.
    pub fn matmul_dense_t(&self, x: &Matrix) -> Result<Matrix> {
        if self.n_rows != x.rows() {
            return Err(Error::Shape {
                op: "sparse_dense_matmul_t",
                lhs: (self.n_cols, self.n_rows),
                rhs: x.shape(),
            });
        }
        let m = x.cols();
        let mut out = Matrix::zeros(self.n_cols, m);
        for i in 0..self.n_rows {
            let xrow = x.row(i);
            for (j, a) in self.row(i) {
                for (o, &b) in out.row_mut(j).iter_mut().zip(xrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, [(0, 1, 2.0), (1, 0, 2.0), (1, 2, 0.5), (2, 1, 0.5)]).unwrap()
    }

    #[test]
    fn duplicate_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn spmm_matches_dense() {
        let a = sample();
        let x = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.0);
        let dense = a.to_dense().matmul(&x).unwrap();
        assert_eq!(a.matmul_dense(&x).unwrap(), dense);
        let dense_t = a.to_dense().transpose().matmul(&x).unwrap();
        assert_eq!(a.matmul_dense_t(&x).unwrap(), dense_t);
    }

    #[test]
    fn add_diagonal_and_symmetry() {
        let a = sample();
        assert!(a.is_symmetric(0.0));
        let b = a.add_diagonal(1.0);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(0, 1), 2.0);
        assert_eq!(b.nnz(), a.nnz() + 3);
    }
}
