//! Small dense matrices and LU factorization with partial pivoting.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row slices. All rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[T]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row_slice(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row_slice(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "dimension mismatch in mul_vec");
        (0..self.rows)
            .map(|i| {
                self.row_slice(i)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn mul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "dimension mismatch in mul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, factor: T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix<T>) -> Matrix<T> {
        self.add(&other.scaled(-T::one()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `P A = L U` with unit-diagonal `L` stored below the diagonal of `lu`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    swaps: usize,
}

impl<T: Real> Lu<T> {
    /// Factors a square matrix. Never fails; a zero pivot column is left in
    /// place and shows up as a zero on the diagonal of `U`.
    pub fn factor(a: &Matrix<T>) -> Self {
        assert!(a.is_square(), "LU factorization needs a square matrix");
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;

        for k in 0..n {
            let pivot_row = (k..n)
                .max_by(|&p, &q| {
                    lu[(p, k)]
                        .abs()
                        .partial_cmp(&lu[(q, k)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(k);
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                perm.swap(k, pivot_row);
                swaps += 1;
            }
            let pivot = lu[(k, k)];
            if pivot == T::zero() {
                continue;
            }
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor == T::zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    lu[(i, j)] = lu[(i, j)] - factor * lu[(k, j)];
                }
            }
        }
        Self { lu, perm, swaps }
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn u_diagonal(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.lu[(i, i)]).collect()
    }

    pub fn determinant(&self) -> T {
        let prod = self.u_diagonal().into_iter().fold(T::one(), |acc, d| acc * d);
        if self.swaps % 2 == 1 {
            -prod
        } else {
            prod
        }
    }

    /// Smallest pivot magnitude relative to the largest entry of `U`.
    pub fn min_pivot(&self) -> T {
        self.u_diagonal()
            .into_iter()
            .fold(T::infinity(), |m, d| m.min(d.abs()))
    }

    /// Solves `A x = b`. Returns `None` when a pivot is exactly zero.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side has wrong length");
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc = acc - self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc = acc - self.lu[(i, j)] * x[j];
            }
            let d = self.lu[(i, i)];
            if d == T::zero() {
                return None;
            }
            x[i] = acc / d;
        }
        Some(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Option<Matrix<T>> {
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<T> = (0..b.nrows()).map(|i| b[(i, j)]).collect();
            let x = self.solve(&col)?;
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Some(out)
    }
}

/// Infinity norm of `A x - b`.
pub fn residual_inf<T: Real>(a: &Matrix<T>, x: &[T], b: &[T]) -> T {
    a.mul_vec(x)
        .into_iter()
        .zip(b)
        .fold(T::zero(), |m, (ax, &bi)| m.max((ax - bi).abs()))
}

pub fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}
