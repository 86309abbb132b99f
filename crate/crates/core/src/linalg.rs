//! Small dense complex matrices and a profile (envelope) Cholesky solver.
//!
//! [`CMatrix`] is row-major and generic over the scalar. [`ProfileCholesky`] factors
//! Hermitian positive definite matrices whose lower triangle is confined to a
//! per-row envelope; cyclic-banded systems such as `H C H^H + N0 I` have a
//! band plus a few dense trailing rows, so the factor stays sparse.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::{Error, Real, Result};

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T: Real = f64> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex::new(T::one(), T::zero()));
        }
        m
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Complex<T>,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix column by column.
    pub fn from_columns(rows: usize, cols: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let ncols = cols.len();
        let mut m = Self::zeros(rows, ncols);
        for (c, col) in cols.into_iter().enumerate() {
            if col.len() != rows {
                return Err(Error::dim("column length"));
            }
            for (r, v) in col.into_iter().enumerate() {
                m.set(r, c, v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let orow = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rhs.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                        acc + a * b
                    })
            })
            .collect())
    }

    pub fn frobenius_sq(&self) -> T {
        crate::transforms::energy(&self.data)
    }

    pub fn row_energy(&self, r: usize) -> T {
        crate::transforms::energy(self.row(r))
    }

    /// Number of entries with modulus above `tol` in row `r`.
    pub fn row_nnz(&self, r: usize, tol: T) -> usize {
        self.row(r).iter().filter(|v| v.norm() > tol).count()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).norm()))
    }

    /// Kronecker product `self (x) rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        Self::from_fn(self.rows * rhs.rows, self.cols * rhs.cols, |r, c| {
            self.get(r / rhs.rows, c / rhs.cols) * rhs.get(r % rhs.rows, c % rhs.cols)
        })
    }
}

impl CMatrix<f64> {
    pub fn to_nalgebra(&self) -> DMatrix<Complex<f64>> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<Complex<f64>>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

/// Cholesky factor `A = L L^H` stored over a per-row envelope.
#[derive(Debug, Clone)]
pub struct ProfileCholesky {
    first: Vec<usize>,
    rows: Vec<Vec<Complex<f64>>>,
}

impl ProfileCholesky {
    /// Factors the Hermitian matrix whose lower-triangular entries are produced by
    /// `entries`, a list of `(row, col, value)` with `col <= row`. Duplicate
    /// coordinates are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, Complex<f64>)]) -> Result<Self> {
        let mut first: Vec<usize> = (0..n).collect();
        for &(r, c, _) in entries {
            if c > r || r >= n {
                return Err(Error::dim("profile entry outside lower triangle"));
            }
            first[r] = first[r].min(c);
        }
        let mut rows: Vec<Vec<Complex<f64>>> = (0..n)
            .map(|r| vec![Complex::new(0.0, 0.0); r - first[r] + 1])
            .collect();
        for &(r, c, v) in entries {
            rows[r][c - first[r]] += v;
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let mut s = rows[i][j - fi];
                if start < j {
                    let (ri, rj) = if i == j {
                        (&rows[i][start - fi..j - fi], &rows[i][start - fi..j - fi])
                    } else {
                        (&rows[i][start - fi..j - fi], &rows[j][start - fj..j - fj])
                    };
                    for (a, b) in ri.iter().zip(rj) {
                        s -= a * b.conj();
                    }
                }
                if j == i {
                    let scale = rows[i][i - fi].re.abs();
                    if !(s.re > 1e-13 * scale) || !s.re.is_finite() {
                        return Err(Error::Numeric(format!(
                            "matrix not positive definite at pivot {i} ({})",
                            s.re
                        )));
                    }
                    rows[i][i - fi] = Complex::new(s.re.sqrt(), 0.0);
                } else {
                    let d = rows[j][j - fj].re;
                    rows[i][j - fi] = s / d;
                }
            }
        }
        Ok(Self { first, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> Complex<f64> {
        self.rows[i][j - self.first[i]]
    }

    /// Solves `L y = b` in place, skipping the leading zeros of `b`.
    pub fn forward(&self, b: &mut [Complex<f64>]) {
        let n = self.dim();
        let start = b
            .iter()
            .position(|v| v.re != 0.0 || v.im != 0.0)
            .unwrap_or(n);
        for i in start..n {
            let fi = self.first[i].max(start);
            let mut s = b[i];
            let row = &self.rows[i][fi - self.first[i]..i - self.first[i]];
            for (a, x) in row.iter().zip(&b[fi..i]) {
                s -= a * x;
            }
            b[i] = s / self.l(i, i).re;
        }
    }

    /// Solves `L^H x = y` in place.
    pub fn backward(&self, y: &mut [Complex<f64>]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let xi = y[i] / self.l(i, i).re;
            y[i] = xi;
            let fi = self.first[i];
            for (j, a) in (fi..i).zip(&self.rows[i]) {
                y[j] -= a.conj() * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `b^H A^{-1} b`, computed as `||L^{-1} b||^2`.
    pub fn quad_form(&self, b: &[Complex<f64>]) -> f64 {
        let mut y = b.to_vec();
        self.forward(&mut y);
        y.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.l(i, i).re.ln()).sum()
    }
}
