//! Dense complex linear algebra.
//!
//! [`ComplexMatrix`] is a row-major dense matrix over `Complex64`. Products
//! go through `matrixmultiply::zgemm`; Hermitian eigendecompositions are
//! delegated to nalgebra. Every contract here is stated through residual
//! tolerances rather than through the choice of algorithm.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used for Hermitian checks.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Relative tolerance on eigendecomposition residuals.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;
/// Relative rank cutoff: eigenvalues `<= rank_tol * lambda_max` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4e}{:+.4e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// `c * I_n`.
    pub fn scalar(n: usize, c: Complex64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_row_major(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(x, 0.0);
        }
        m
    }

    /// Column vector from complex entries.
    pub fn column(entries: &[Complex64]) -> Self {
        Self {
            rows: entries.len(),
            cols: 1,
            data: entries.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }

    pub fn ensure_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::NonSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows == other.rows && self.cols == other.cols {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            })
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product `self * rhs`.
    ///
    /// # Panics
    /// If the inner dimensions differ.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: inner dimensions {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm_into(self, rhs, &mut out);
        out
    }

    /// `self * rhs^*`, the building block of every moment-kernel entry.
    pub fn mul_adjoint(&self, rhs: &Self) -> Self {
        self.matmul(&rhs.adjoint())
    }

    /// `self^* * rhs`.
    pub fn adjoint_mul(&self, rhs: &Self) -> Self {
        self.adjoint().matmul(rhs)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn scale_complex(&self, c: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: Complex64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `Tr(self * rhs^*)` without forming the product.
    pub fn trace_mul_adjoint(&self, rhs: &Self) -> Complex64 {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "trace_mul_adjoint shape");
        self.data.iter().zip(&rhs.data).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Squared Frobenius norm, `Tr(M M^*)`.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |M[i,j] - conj(M[j,i])|`.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Hermitian within `HERMITIAN_TOL * (1 + max|M|)`.
    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() <= HERMITIAN_TOL * (1.0 + self.max_abs())
    }

    /// `(M + M^*) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in i..self.cols {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                out[(i, j)] = avg;
                out[(j, i)] = avg.conj();
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Copies the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            let src = (r0 + i) * self.cols + c0;
            out.data[i * cols..(i + 1) * cols].copy_from_slice(&self.data[src..src + cols]);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "set_block out of range"
        );
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(&block.data[i * block.cols..(i + 1) * block.cols]);
        }
    }

    /// Column `j` as a vector.
    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Keeps the columns listed in `idx`, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// `max |a - b|` over entries; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn gemm_into(a: &ComplexMatrix, b: &ComplexMatrix, c: &mut ComplexMatrix) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.fill(ZERO);
        return;
    }
    // SAFETY: the three buffers are live, row-major with the given strides,
    // sized m*k, k*n and m*n, and `c` does not alias `a` or `b`.
    // Complex64 is repr(C) with layout [f64; 2].
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.data.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.data.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            c.data.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

/// Eigendecomposition `M = U diag(eigenvalues) U^*` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Unitary; column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `U diag(g(lambda)) U^*`.
    pub fn apply(&self, g: impl Fn(f64) -> f64) -> ComplexMatrix {
        let u = &self.eigenvectors;
        let n = self.dim();
        let mut scaled = u.clone();
        for j in 0..n {
            let s = g(self.eigenvalues[j]);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        scaled.mul_adjoint(u)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.apply(|x| x)
    }

    /// Indices of eigenvalues above `rank_tol * max(lambda_max, 0)`.
    pub fn retained(&self, rank_tol: f64) -> Vec<usize> {
        let top = self.max();
        if top <= 0.0 {
            return Vec::new();
        }
        let cut = rank_tol * top;
        (0..self.dim()).filter(|&k| self.eigenvalues[k] > cut).collect()
    }
}

/// Eigendecomposition of the Hermitian part of `m`, eigenvalues ascending.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianEig> {
    let n = m.ensure_square()?;
    m.ensure_finite()?;
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: Vec::new(),
            eigenvectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let eig = m.hermitian_part().to_nalgebra().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_nalgebra(&eig.eigenvectors);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors: vectors.select_columns(&order),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdVerdict {
    pub is_psd: bool,
    pub min_eig: f64,
}

/// `is_psd = min_eig >= -tol` for the Hermitian part of `m`.
pub fn psd_verdict(m: &ComplexMatrix, tol: f64) -> Result<PsdVerdict> {
    let eig = hermitian_eig(m)?;
    let min_eig = eig.min();
    Ok(PsdVerdict {
        is_psd: min_eig >= -tol,
        min_eig,
    })
}

/// Pseudo-inverse square root `W = U_r diag(lambda_r^{-1/2}) U_r^*`.
#[derive(Clone, Debug)]
pub struct PinvSqrt {
    pub w: ComplexMatrix,
    pub rank: usize,
}

pub fn pinv_sqrt(m: &ComplexMatrix, rank_tol: f64) -> Result<PinvSqrt> {
    let eig = hermitian_eig(m)?;
    let top = eig.max().max(0.0);
    if eig.min() < -rank_tol * top {
        return Err(Error::NotPsd {
            min_eig: eig.min(),
            tol: rank_tol * top,
        });
    }
    let cut = rank_tol * top;
    let rank = eig.retained(rank_tol).len();
    let w = eig.apply(|x| if top > 0.0 && x > cut { x.powf(-0.5) } else { 0.0 });
    Ok(PinvSqrt { w, rank })
}

/// Principal square root of a PSD matrix; eigenvalues in `(-tol, 0)` are clipped.
pub fn psd_sqrt(m: &ComplexMatrix, tol: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(m)?;
    let scale = eig.max().abs().max(1.0);
    if eig.min() < -tol * scale {
        return Err(Error::NotPsd {
            min_eig: eig.min(),
            tol: tol * scale,
        });
    }
    Ok(eig.apply(|x| x.max(0.0).sqrt()))
}

/// Largest singular value.
pub fn spectral_norm(m: &ComplexMatrix) -> Result<f64> {
    m.ensure_finite()?;
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0.0);
    }
    let gram = if m.cols() <= m.rows() {
        m.adjoint_mul(m)
    } else {
        m.mul_adjoint(m)
    };
    let eig = hermitian_eig(&gram)?;
    Ok(eig.max().max(0.0).sqrt())
}
