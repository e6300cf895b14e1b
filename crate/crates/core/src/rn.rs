//! Radon-Nikodym densities between truncated kernel Gram matrices.
//!
//! For PSD Gram matrices `G_K <= G_L` there is a unique `0 <= A <= I` on the
//! range of `G_L` with `G_K = V_L^* A V_L`, where `G_L = V_L^* V_L` is the
//! minimal Kolmogorov factorization. The density is reported in the
//! eigenbasis of `G_L`; verdicts depend only on basis-free quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{assemble_gram, assemble_shifted_gram, Enforcement, Gram, KernelEstimate, SubalgebraSpec};
use crate::numerics::{hermitian_eig, psd_verdict, ComplexMatrix, HermitianEig};

/// Numerical thresholds shared by the density and order tests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Eigenvalues down to `-psd_clip_tol * max(lambda_max, 1)` are clipped to zero.
    pub psd_clip_tol: f64,
    /// Relative rank cutoff.
    pub rank_tol: f64,
    /// Slack on `0 <= A <= I`.
    pub density_tol: f64,
    /// Largest admissible relative mass of `G_K` outside `range(G_L)`.
    pub leak_tol: f64,
    /// Largest admissible relative Kolmogorov residual.
    pub factor_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd_clip_tol: 1e-8,
            rank_tol: 1e-9,
            density_tol: 1e-8,
            leak_tol: 1e-6,
            factor_tol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psd_clip_tol", self.psd_clip_tol),
            ("rank_tol", self.rank_tol),
            ("density_tol", self.density_tol),
            ("leak_tol", self.leak_tol),
            ("factor_tol", self.factor_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `G = V^* V` with `V = diag(sqrt(lambda_r)) U_r^*` over the retained spectrum.
#[derive(Clone, Debug)]
pub struct KolmogorovFactor {
    /// `rank x n`.
    pub v: ComplexMatrix,
    pub rank: usize,
    /// `||V^* V - G||_F / (1 + ||G||_F)`.
    pub residual: f64,
    /// Ascending.
    pub retained_eigenvalues: Vec<f64>,
    /// `n x rank`, orthonormal columns spanning the retained range.
    pub basis: ComplexMatrix,
}

fn checked_eig(g: &ComplexMatrix, clip: f64) -> Result<HermitianEig> {
    let eig = hermitian_eig(g)?;
    let tol = clip * eig.max().max(1.0);
    if eig.min() < -tol {
        return Err(Error::NotPsd {
            min_eig: eig.min(),
            tol,
        });
    }
    Ok(eig)
}

pub fn kolmogorov_factor(g: &ComplexMatrix, tols: &Tolerances) -> Result<KolmogorovFactor> {
    let eig = checked_eig(g, tols.psd_clip_tol)?;
    factor_from_eig(g, &eig, tols)
}

fn factor_from_eig(g: &ComplexMatrix, eig: &HermitianEig, tols: &Tolerances) -> Result<KolmogorovFactor> {
    let keep = eig.retained(tols.rank_tol);
    let basis = eig.eigenvectors.select_columns(&keep);
    let retained: Vec<f64> = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut v = basis.adjoint();
    for (row, &lambda) in retained.iter().enumerate() {
        let s = lambda.sqrt();
        for col in 0..v.cols() {
            v[(row, col)] *= s;
        }
    }
    let residual = (&v.adjoint_mul(&v) - g).frobenius_norm() / (1.0 + g.frobenius_norm());
    if residual > tols.factor_tol {
        return Err(Error::InvalidArgument(format!(
            "Kolmogorov residual {residual:e} exceeds factor_tol {:e}",
            tols.factor_tol
        )));
    }
    Ok(KolmogorovFactor {
        rank: keep.len(),
        v,
        residual,
        retained_eigenvalues: retained,
        basis,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityVerdict {
    Dominated,
    NotDominated,
    Inconclusive,
}

/// Radon-Nikodym density of `G_K` with respect to `G_L` and its verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityReport {
    pub dim: usize,
    pub rank: usize,
    /// `rank x rank`, in the retained eigenbasis of `G_L`.
    #[serde(skip)]
    pub density: ComplexMatrix,
    /// Orthonormal basis of the retained range of `G_L` (`dim x rank`).
    #[serde(skip)]
    pub basis: ComplexMatrix,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `lambda_max - 1`; positive values measure the violation of `A <= I`.
    pub margin: f64,
    pub reconstruction_residual: f64,
    pub support_leak: f64,
    pub leak_threshold: f64,
    pub density_tol: f64,
    /// Monte Carlo uncertainty on the density spectrum (0 for exact inputs).
    pub uncertainty: f64,
    pub verdict: DensityVerdict,
}

impl DensityReport {
    /// The density as an operator on the ambient space, `U_r A U_r^*`.
    pub fn ambient_density(&self) -> ComplexMatrix {
        self.basis.matmul(&self.density).mul_adjoint(&self.basis)
    }
}

/// Standard errors of the two Gram matrices, used to widen the verdict.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GramUncertainty {
    pub se_k: f64,
    pub se_l: f64,
    pub z: f64,
}

pub fn rn_density(g_k: &ComplexMatrix, g_l: &ComplexMatrix, tols: &Tolerances) -> Result<DensityReport> {
    rn_density_with_uncertainty(g_k, g_l, tols, GramUncertainty::default())
}

/// [`rn_density`] with Monte Carlo error propagation: the spectrum is
/// uncertain up to `z (se_k + lambda_max se_l) / lambda_min^+(G_L)`, and
/// the support-leak threshold is widened to `4 se_k / (1 + ||G_K||_F)`.
pub fn rn_density_with_uncertainty(
    g_k: &ComplexMatrix,
    g_l: &ComplexMatrix,
    tols: &Tolerances,
    mc: GramUncertainty,
) -> Result<DensityReport> {
    tols.validate()?;
    let dim = g_l.ensure_square()?;
    g_k.ensure_same_shape(g_l)?;
    checked_eig(g_k, tols.psd_clip_tol)?;
    let eig_l = checked_eig(g_l, tols.psd_clip_tol)?;
    let keep = eig_l.retained(tols.rank_tol);
    let rank = keep.len();
    let basis = eig_l.eigenvectors.select_columns(&keep);
    let inv_sqrt: Vec<f64> = keep.iter().map(|&k| eig_l.eigenvalues[k].powf(-0.5)).collect();

    // W_r = U_r diag(lambda_r^{-1/2}); density = W_r^* G_K W_r.
    let mut w = basis.clone();
    for i in 0..dim {
        for (j, s) in inv_sqrt.iter().enumerate() {
            w[(i, j)] *= *s;
        }
    }
    let density = w.adjoint_mul(&g_k.matmul(&w)).hermitian_part();
    let spec = hermitian_eig(&density)?;
    let eigenvalues = spec.eigenvalues.clone();
    let lambda_min = spec.min();
    let lambda_max = spec.max();

    let gk_norm = g_k.frobenius_norm();
    let projector = basis.mul_adjoint(&basis);
    let complement = &ComplexMatrix::identity(dim) - &projector;
    let outside = complement.matmul(g_k).matmul(&complement);
    let support_leak = outside.frobenius_norm() / (1.0 + gk_norm);

    // V_L^* A V_L = U_r Λ^{1/2} A Λ^{1/2} U_r^*, compared with P G_K P.
    let mut half = basis.clone();
    for i in 0..dim {
        for (j, s) in inv_sqrt.iter().enumerate() {
            half[(i, j)] /= *s;
        }
    }
    let rebuilt = half.matmul(&density).mul_adjoint(&half);
    let on_range = projector.matmul(g_k).matmul(&projector);
    let reconstruction_residual = (&rebuilt - &on_range).frobenius_norm() / (1.0 + gk_norm);

    let smallest = keep.first().map_or(0.0, |&k| eig_l.eigenvalues[k]);
    let uncertainty = if rank == 0 || mc.z == 0.0 {
        0.0
    } else {
        mc.z * (mc.se_k + lambda_max.max(0.0) * mc.se_l) / smallest
    };
    let leak_threshold = tols.leak_tol.max(4.0 * mc.se_k / (1.0 + gk_norm));
    let dt = tols.density_tol;
    let leak_ok = support_leak <= leak_threshold;
    let verdict = if lambda_min >= -dt && lambda_max <= 1.0 + dt && leak_ok {
        DensityVerdict::Dominated
    } else if uncertainty > 0.0 && lambda_min >= -dt - uncertainty && lambda_max <= 1.0 + dt + uncertainty && leak_ok {
        DensityVerdict::Inconclusive
    } else {
        DensityVerdict::NotDominated
    };

    Ok(DensityReport {
        dim,
        rank,
        density,
        basis,
        eigenvalues,
        lambda_min,
        lambda_max,
        margin: lambda_max - 1.0,
        reconstruction_residual,
        support_leak,
        leak_threshold,
        density_tol: dt,
        uncertainty,
        verdict,
    })
}

/// Density of `G_K` computed through an arbitrary factor `G_L = V^* V` with
/// `V` of full row rank: `A = (V^+)^* G_K V^+`, `V^+ = V^* (V V^*)^{-1}`.
pub fn density_from_factor(g_k: &ComplexMatrix, v: &ComplexMatrix) -> Result<ComplexMatrix> {
    if v.cols() != g_k.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("factor with {} columns", g_k.rows()),
            found: format!("{} columns", v.cols()),
        });
    }
    let gram = v.mul_adjoint(v);
    let eig = hermitian_eig(&gram)?;
    if eig.min() <= 0.0 {
        return Err(Error::InvalidArgument("factor must have full row rank".into()));
    }
    let inv = eig.apply(|x| 1.0 / x);
    let pinv = v.adjoint().matmul(&inv);
    Ok(pinv.adjoint_mul(&g_k.matmul(&pinv)).hermitian_part())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderTest {
    pub passes: bool,
    pub min_eig_of_difference: f64,
    pub tol: f64,
}

/// Kernel-order test at a finite section: `G_Σ <= G` iff `G - G_Σ` is PSD within `tol`.
pub fn order_test(g: &ComplexMatrix, g_sigma: &ComplexMatrix, tol: f64) -> Result<OrderTest> {
    g.ensure_square()?;
    g.ensure_same_shape(g_sigma)?;
    let v = psd_verdict(&(g - g_sigma), tol)?;
    Ok(OrderTest {
        passes: v.is_psd,
        min_eig_of_difference: v.min_eig,
        tol,
    })
}

/// The density tolerance equivalent to an order-test tolerance:
/// `tol / lambda_min^+(G)`.
pub fn tied_density_tol(g: &ComplexMatrix, tol: f64, rank_tol: f64) -> Result<f64> {
    let eig = hermitian_eig(g)?;
    let keep = eig.retained(rank_tol);
    let smallest = keep
        .first()
        .map(|&k| eig.eigenvalues[k])
        .ok_or_else(|| Error::InvalidArgument("Gram matrix has empty range".into()))?;
    Ok(tol / smallest)
}

/// Everything computed by a shift-density run at order `M`.
#[derive(Clone, Debug)]
pub struct ShiftAnalysis {
    pub gram: Gram,
    pub shifted: Gram,
    pub density: DensityReport,
    pub order: OrderTest,
}

/// Density of the shifted kernel `(K_B)_Σ` with respect to `K_B` at order
/// `order`, plus the equivalent kernel-order test. Needs `K.max_len >= order + 1`.
pub fn shift_analysis(
    k: &KernelEstimate,
    b: &SubalgebraSpec,
    order: usize,
    enforce: Enforcement,
    tols: &Tolerances,
    z: f64,
) -> Result<ShiftAnalysis> {
    if k.max_len < order + 1 {
        return Err(Error::OrderExceeded {
            requested: order + 1,
            available: k.max_len,
        });
    }
    let gram = assemble_gram(k, order, b, enforce, tols.psd_clip_tol)?;
    let shifted = assemble_shifted_gram(k, order, b, enforce, tols.psd_clip_tol)?;
    let mc = GramUncertainty {
        se_k: shifted.se,
        se_l: gram.se,
        z,
    };
    let density = rn_density_with_uncertainty(&shifted.matrix, &gram.matrix, tols, mc)?;
    let order_tol = order_tol_for(&gram.matrix, tols)?;
    let order = order_test(&gram.matrix, &shifted.matrix, order_tol)?;
    Ok(ShiftAnalysis {
        gram,
        shifted,
        density,
        order,
    })
}

/// Order-test tolerance matching `density_tol`: `density_tol * lambda_min^+(G)`.
fn order_tol_for(g: &ComplexMatrix, tols: &Tolerances) -> Result<f64> {
    let eig = hermitian_eig(g)?;
    let keep = eig.retained(tols.rank_tol);
    Ok(keep
        .first()
        .map_or(tols.density_tol, |&k| tols.density_tol * eig.eigenvalues[k]))
}

/// Radon-Nikodym density of `(K_B)_Σ` with respect to `K_B` at order `order`.
pub fn shift_density(
    k: &KernelEstimate,
    b: &SubalgebraSpec,
    order: usize,
    enforce: Enforcement,
    tols: &Tolerances,
    z: f64,
) -> Result<DensityReport> {
    Ok(shift_analysis(k, b, order, enforce, tols, z)?.density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::EnsembleSpec;
    use crate::kernel::estimate_kernel;
    use crate::numerics::psd_sqrt;
    use crate::synthetic::{random_contraction, random_matrix, random_psd, spectrum};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    /// Spectrum of the compression of `a0` onto the column space of `v`,
    /// built from a QR factorization of `v` (independent of `G_L`'s eigenbasis).
    fn compressed_spectrum(a0: &ComplexMatrix, v: &ComplexMatrix) -> Vec<f64> {
        let q: DMatrix<Complex64> = v.to_nalgebra().qr().q();
        let q = ComplexMatrix::from_nalgebra(&q);
        spectrum(&q.adjoint_mul(&a0.matmul(&q)))
    }

    #[test]
    fn factor_examples() {
        let f = kolmogorov_factor(&ComplexMatrix::identity(4), &tols()).unwrap();
        assert_eq!(f.rank, 4);
        assert!(f.residual < 1e-15);

        let f = kolmogorov_factor(&ComplexMatrix::from_diag(&[4.0, 0.0]), &tols()).unwrap();
        assert_eq!(f.rank, 1);
        assert!((f.v[(0, 0)].norm() - 2.0).abs() < 1e-15);
        assert_eq!(f.v[(0, 1)].norm(), 0.0);

        assert!(matches!(
            kolmogorov_factor(&ComplexMatrix::from_diag(&[1.0, -0.1]), &tols()),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn factor_rows_span_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_psd(7, 3, &mut rng);
        let f = kolmogorov_factor(&g, &tols()).unwrap();
        assert_eq!(f.rank, 3);
        assert!(f.residual <= 1e-12);
    }

    #[test]
    fn identical_kernels_give_identity() {
        let r = rn_density(&ComplexMatrix::identity(5), &ComplexMatrix::identity(5), &tols()).unwrap();
        assert_eq!(r.verdict, DensityVerdict::Dominated);
        assert!(r.density.max_abs_diff(&ComplexMatrix::identity(5)) < 1e-14);
    }

    #[test]
    fn halved_kernel_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gl = random_psd(6, 6, &mut rng);
        let r = rn_density(&gl.scale(0.5), &gl, &tols()).unwrap();
        for x in &r.eigenvalues {
            assert!((x - 0.5).abs() < 1e-9, "{:?}", r.eigenvalues);
        }
        assert_eq!(r.verdict, DensityVerdict::Dominated);
    }

    #[test]
    fn forward_construction_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for rank in [8, 5] {
            let v = random_matrix(8, rank, &mut rng);
            let gl = v.mul_adjoint(&v);
            let (a0, _) = random_contraction(8, 0.0, 1.0, &mut rng);
            let root = psd_sqrt(&gl, 1e-12).unwrap();
            let gk = root.matmul(&a0).matmul(&root);
            let r = rn_density(&gk, &gl, &tols()).unwrap();
            let want = compressed_spectrum(&a0, &v);
            assert_eq!(r.rank, rank);
            for (got, want) in r.eigenvalues.iter().zip(&want) {
                assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            }
            assert!(r.support_leak < 1e-10);
            assert!(r.reconstruction_residual < 1e-10);
            assert_eq!(r.verdict, DensityVerdict::Dominated);
        }
    }

    #[test]
    fn leak_outside_range_is_detected() {
        let gl = ComplexMatrix::from_diag(&[1.0, 0.0]);
        let gk = ComplexMatrix::from_diag(&[0.5, 0.5]);
        let r = rn_density(&gk, &gl, &tols()).unwrap();
        assert!(r.support_leak > 0.1);
        assert_eq!(r.verdict, DensityVerdict::NotDominated);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = rn_density(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3), &tols());
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        assert!(order_test(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3), 1e-9).is_err());
    }

    #[test]
    fn different_factorizations_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gl = random_psd(6, 6, &mut rng);
        let (a0, _) = random_contraction(6, 0.1, 0.9, &mut rng);
        let root = psd_sqrt(&gl, 1e-12).unwrap();
        let gk = root.matmul(&a0).matmul(&root);
        let f = kolmogorov_factor(&gl, &tols()).unwrap();
        let phases = ComplexMatrix::from_fn(6, 6, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, 0.7 * i as f64 + 0.1)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let rotated = phases.matmul(&f.v);
        let a = spectrum(&density_from_factor(&gk, &f.v).unwrap());
        let b = spectrum(&density_from_factor(&gk, &rotated).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn haar_shift_density_is_identity() {
        let spec = EnsembleSpec::HaarUnitary { n: 8 };
        let k = estimate_kernel(&spec, 4, 5, 1).unwrap();
        let a = shift_analysis(&k, &SubalgebraSpec::Full, 3, Enforcement::Biunitary, &tols(), 3.0).unwrap();
        assert_eq!(a.density.rank, 32);
        for x in &a.density.eigenvalues {
            assert!((x - 1.0).abs() < 1e-10);
        }
        assert_eq!(a.density.verdict, DensityVerdict::Dominated);
        assert!(a.order.passes);
        assert!(a.order.min_eig_of_difference.abs() < 1e-8);
    }

    #[test]
    fn scaled_identity_is_not_dominated() {
        let spec = EnsembleSpec::Deterministic {
            matrices: vec![ComplexMatrix::identity(3).scale(2.0)],
        };
        let k = estimate_kernel(&spec, 2, 1, 0).unwrap();
        let a = shift_analysis(&k, &SubalgebraSpec::Full, 1, Enforcement::None, &tols(), 3.0).unwrap();
        assert!((a.density.lambda_max - 4.0).abs() < 1e-12);
        assert!((a.density.margin - 3.0).abs() < 1e-12);
        assert_eq!(a.density.verdict, DensityVerdict::NotDominated);
        assert!(!a.order.passes);
        assert!(matches!(
            shift_density(&k, &SubalgebraSpec::Full, 2, Enforcement::None, &tols(), 3.0),
            Err(Error::OrderExceeded { .. })
        ));
    }

    #[test]
    fn scaling_scales_the_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gl = random_psd(5, 5, &mut rng);
        let (a0, _) = random_contraction(5, 0.0, 1.0, &mut rng);
        let root = psd_sqrt(&gl, 1e-12).unwrap();
        let gk = root.matmul(&a0).matmul(&root);
        let base = rn_density(&gk, &gl, &tols()).unwrap();
        for t in [0.25, 0.6, 1.0] {
            let r = rn_density(&gk.scale(t), &gl, &tols()).unwrap();
            for (x, y) in r.eigenvalues.iter().zip(&base.eigenvalues) {
                assert!((x - t * y).abs() < 1e-10);
            }
        }
    }
}
