//! Random test matrices: Gaussian fills, Hermitian and PSD matrices,
//! isometries and contractions. Used to build synthetic kernels with a
//! known Radon-Nikodym density.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{hermitian_eig, ComplexMatrix};

/// Circular complex Gaussian with `E|z|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Matrix of i.i.d. unit-variance complex Gaussians.
pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng, 1.0))
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    random_matrix(n, n, rng).hermitian_part()
}

/// `V V^*` for an `n x rank` Gaussian `V`.
pub fn random_psd<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> ComplexMatrix {
    let v = random_matrix(n, rank, rng);
    v.mul_adjoint(&v)
}

/// `rows x cols` matrix with orthonormal columns (`rows >= cols`).
pub fn random_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    assert!(rows >= cols, "isometry needs rows >= cols");
    let z = random_matrix(rows, cols, rng).to_nalgebra();
    let q: DMatrix<Complex64> = z.qr().q();
    ComplexMatrix::from_nalgebra(&q)
}

/// Random unitary (not Haar distributed; use the ensembles module for that).
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    random_isometry(n, n, rng)
}

/// Hermitian `A` with `0 <= A <= I` and eigenvalues drawn uniformly from `[lo, hi]`.
pub fn random_contraction<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> (ComplexMatrix, Vec<f64>) {
    let u = random_unitary(n, rng);
    let mut spectrum: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    spectrum.sort_by(f64::total_cmp);
    let d = ComplexMatrix::from_diag(&spectrum);
    (u.matmul(&d).mul_adjoint(&u), spectrum)
}

/// Ascending eigenvalues, panicking on invalid input. Test convenience.
pub fn spectrum(m: &ComplexMatrix) -> Vec<f64> {
    hermitian_eig(m).expect("hermitian input").eigenvalues
}
