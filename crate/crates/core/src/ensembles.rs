//! Seed-reproducible samplers for random matrix ensembles.
//!
//! Every draw is a pure function of `(spec, seed, sample_index)`: the seed
//! keys a ChaCha8 stream and the sample index selects the stream number, so
//! sample `k` never depends on which thread produced it or in what order.
//!
//! Complex Gaussians follow the convention `E|a|^2 = sigma^2`, with real and
//! imaginary parts each of variance `sigma^2 / 2`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::synthetic::complex_gaussian;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// i.i.d. entries of variance `tau / n`.
    Ginibre {
        n: usize,
        tau: f64,
    },
    /// i.i.d. entries of variance `sigma2`.
    GinibreRaw {
        n: usize,
        sigma2: f64,
    },
    HaarUnitary {
        n: usize,
    },
    /// Entry `(i, j)` with `i` in block `r`, `j` in block `s` has variance
    /// `tau[r][s] / N`, `N = sum(sizes)`.
    BlockGinibre {
        sizes: Vec<usize>,
        tau: Vec<Vec<f64>>,
    },
    /// `d` independent `Ginibre { n, tau }` matrices.
    GinibreTuple {
        d: usize,
        n: usize,
        tau: f64,
    },
    /// Fixed matrices returned for every sample.
    Deterministic {
        matrices: Vec<ComplexMatrix>,
    },
}

/// Identifies one draw: `(seed, sample_index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleIdentity {
    pub seed: u64,
    pub sample_index: u64,
}

impl SampleIdentity {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        Self { seed, sample_index }
    }

    /// ChaCha8 keyed by the seed, positioned on stream `sample_index`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.sample_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_variance(name: &str, x: f64, strictly_positive: bool) -> Result<()> {
    if !x.is_finite() || x < 0.0 || (strictly_positive && x == 0.0) {
        let bound = if strictly_positive { "> 0" } else { ">= 0" };
        return Err(Error::InvalidEnsemble(format!(
            "{name} must be finite and {bound}, got {x}"
        )));
    }
    Ok(())
}

fn check_dim(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidEnsemble(format!("{name} must be at least 1")));
    }
    Ok(())
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnsembleSpec::Ginibre { n, tau } => {
                check_dim("n", *n)?;
                check_variance("tau", *tau, true)
            }
            EnsembleSpec::GinibreRaw { n, sigma2 } => {
                check_dim("n", *n)?;
                check_variance("sigma2", *sigma2, true)
            }
            EnsembleSpec::HaarUnitary { n } => check_dim("n", *n),
            EnsembleSpec::BlockGinibre { sizes, tau } => {
                if sizes.is_empty() {
                    return Err(Error::InvalidEnsemble("sizes must not be empty".into()));
                }
                for &k in sizes {
                    check_dim("block size", k)?;
                }
                if tau.len() != sizes.len() || tau.iter().any(|row| row.len() != sizes.len()) {
                    return Err(Error::InvalidEnsemble(format!(
                        "tau must be a {0}x{0} matrix",
                        sizes.len()
                    )));
                }
                for row in tau {
                    for &t in row {
                        check_variance("tau entry", t, false)?;
                    }
                }
                Ok(())
            }
            EnsembleSpec::GinibreTuple { d, n, tau } => {
                check_dim("d", *d)?;
                check_dim("n", *n)?;
                check_variance("tau", *tau, true)
            }
            EnsembleSpec::Deterministic { matrices } => {
                let first = matrices
                    .first()
                    .ok_or_else(|| Error::InvalidEnsemble("at least one matrix is required".into()))?;
                let n = first.rows();
                check_dim("matrix dimension", n)?;
                for m in matrices {
                    if m.rows() != n || m.cols() != n {
                        return Err(Error::InvalidEnsemble(format!(
                            "all matrices must be {n}x{n}, found {}x{}",
                            m.rows(),
                            m.cols()
                        )));
                    }
                    if !m.is_finite() {
                        return Err(Error::InvalidEnsemble("matrices must be finite".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Ambient dimension `N`.
    pub fn dim(&self) -> usize {
        match self {
            EnsembleSpec::Ginibre { n, .. }
            | EnsembleSpec::GinibreRaw { n, .. }
            | EnsembleSpec::HaarUnitary { n }
            | EnsembleSpec::GinibreTuple { n, .. } => *n,
            EnsembleSpec::BlockGinibre { sizes, .. } => sizes.iter().sum(),
            EnsembleSpec::Deterministic { matrices } => matrices.first().map_or(0, |m| m.rows()),
        }
    }

    /// Number of generators `d`.
    pub fn generators(&self) -> usize {
        match self {
            EnsembleSpec::GinibreTuple { d, .. } => *d,
            EnsembleSpec::Deterministic { matrices } => matrices.len(),
            _ => 1,
        }
    }

    /// Whether the law is invariant under `A -> e^{i theta} A`.
    pub fn is_phase_invariant(&self) -> bool {
        !matches!(self, EnsembleSpec::Deterministic { .. })
    }

    /// Samples are unitary, so `A^w (A^w)^* = I` holds exactly for every word `w`.
    pub fn is_unitary(&self) -> bool {
        matches!(self, EnsembleSpec::HaarUnitary { .. })
    }

    /// The scale `tau = N sigma^2` for ensembles with a single i.i.d. entry variance.
    pub fn tau(&self) -> Option<f64> {
        match self {
            EnsembleSpec::Ginibre { tau, .. } | EnsembleSpec::GinibreTuple { tau, .. } => Some(*tau),
            EnsembleSpec::GinibreRaw { n, sigma2 } => Some(sigma2 * *n as f64),
            _ => None,
        }
    }

    /// Short human-readable label used in reports.
    pub fn label(&self) -> String {
        match self {
            EnsembleSpec::Ginibre { n, tau } => format!("ginibre(n={n}, tau={tau})"),
            EnsembleSpec::GinibreRaw { n, sigma2 } => format!("ginibre_raw(n={n}, sigma2={sigma2})"),
            EnsembleSpec::HaarUnitary { n } => format!("haar_unitary(n={n})"),
            EnsembleSpec::BlockGinibre { sizes, tau } => {
                format!("block_ginibre(sizes={sizes:?}, tau={tau:?})")
            }
            EnsembleSpec::GinibreTuple { d, n, tau } => format!("ginibre_tuple(d={d}, n={n}, tau={tau})"),
            EnsembleSpec::Deterministic { matrices } => {
                format!("deterministic(d={}, n={})", matrices.len(), self.dim())
            }
        }
    }
}

/// Draws the `d` matrices of sample `id`.
pub fn sample(spec: &EnsembleSpec, id: SampleIdentity) -> Result<Vec<ComplexMatrix>> {
    spec.validate()?;
    let mut rng = id.rng();
    let out = match spec {
        EnsembleSpec::Ginibre { n, tau } => vec![ginibre(*n, tau / *n as f64, &mut rng)],
        EnsembleSpec::GinibreRaw { n, sigma2 } => vec![ginibre(*n, *sigma2, &mut rng)],
        EnsembleSpec::HaarUnitary { n } => vec![haar_unitary(*n, &mut rng)],
        EnsembleSpec::BlockGinibre { sizes, tau } => vec![block_ginibre(sizes, tau, &mut rng)],
        EnsembleSpec::GinibreTuple { d, n, tau } => (0..*d).map(|_| ginibre(*n, tau / *n as f64, &mut rng)).collect(),
        EnsembleSpec::Deterministic { matrices } => matrices.clone(),
    };
    Ok(out)
}

/// Draws the single matrix of a one-generator ensemble.
pub fn sample_single(spec: &EnsembleSpec, id: SampleIdentity) -> Result<ComplexMatrix> {
    if spec.generators() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a single-generator ensemble, got d = {}",
            spec.generators()
        )));
    }
    Ok(sample(spec, id)?.pop().expect("one generator"))
}

fn ginibre(n: usize, variance: f64, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| complex_gaussian(rng, variance))
}

fn block_ginibre(sizes: &[usize], tau: &[Vec<f64>], rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let n: usize = sizes.iter().sum();
    let block_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(r, &k)| std::iter::repeat(r).take(k))
        .collect();
    ComplexMatrix::from_fn(n, n, |i, j| {
        complex_gaussian(rng, tau[block_of[i]][block_of[j]] / n as f64)
    })
}

/// Haar unitary via QR of a Ginibre matrix with the phases of `diag(R)`
/// divided out of `Q`.
fn haar_unitary(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let z = ginibre(n, 1.0, rng).to_nalgebra();
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    ComplexMatrix::from_nalgebra(&q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ScalarAccumulator;

    fn id(k: u64) -> SampleIdentity {
        SampleIdentity::new(20240607, k)
    }

    #[test]
    fn haar_samples_are_unitary() {
        let spec = EnsembleSpec::HaarUnitary { n: 20 };
        for k in 0..10 {
            let u = sample_single(&spec, id(k)).unwrap();
            let e = &u.mul_adjoint(&u) - &ComplexMatrix::identity(20);
            assert!(e.frobenius_norm() <= 1e-12);
            let e = &u.adjoint_mul(&u) - &ComplexMatrix::identity(20);
            assert!(e.frobenius_norm() <= 1e-12);
        }
    }

    #[test]
    fn ginibre_normalized_trace_mean() {
        let spec = EnsembleSpec::Ginibre { n: 100, tau: 0.5 };
        let mut acc = ScalarAccumulator::new();
        for k in 0..1000 {
            let a = sample_single(&spec, id(k)).unwrap();
            acc.push(a.norm_sqr() / 100.0);
        }
        let est = acc.summary();
        assert!((est.mean - 0.5).abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn block_ginibre_entry_variance() {
        let spec = EnsembleSpec::BlockGinibre {
            sizes: vec![2, 2],
            tau: vec![vec![0.8, 0.8], vec![0.8, 1.6]],
        };
        let mut acc = ScalarAccumulator::new();
        for k in 0..10_000 {
            let a = sample_single(&spec, id(k)).unwrap();
            // mean of |a_ij|^2 over the (2,2) block
            let s: f64 = (2..4)
                .flat_map(|i| (2..4).map(move |j| (i, j)))
                .map(|ij| a[ij].norm_sqr())
                .sum();
            acc.push(s / 4.0);
        }
        let est = acc.summary();
        assert!((est.mean - 1.6 / 4.0).abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn deterministic_ignores_identity() {
        let m = ComplexMatrix::from_diag(&[1.0, 2.0]);
        let spec = EnsembleSpec::Deterministic {
            matrices: vec![m.clone()],
        };
        assert_eq!(sample(&spec, id(0)).unwrap(), vec![m.clone()]);
        assert_eq!(sample(&spec, SampleIdentity::new(7, 99)).unwrap(), vec![m]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = EnsembleSpec::GinibreTuple { d: 2, n: 5, tau: 1.0 };
        let a = sample(&spec, id(3)).unwrap();
        let b = sample(&spec, id(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample(&spec, id(4)).unwrap());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn phase_invariance_flags() {
        assert!(EnsembleSpec::Ginibre { n: 2, tau: 1.0 }.is_phase_invariant());
        assert!(EnsembleSpec::GinibreRaw { n: 2, sigma2: 1.0 }.is_phase_invariant());
        assert!(EnsembleSpec::HaarUnitary { n: 2 }.is_phase_invariant());
        assert!(EnsembleSpec::GinibreTuple { d: 2, n: 2, tau: 1.0 }.is_phase_invariant());
        assert!(EnsembleSpec::BlockGinibre {
            sizes: vec![1],
            tau: vec![vec![1.0]]
        }
        .is_phase_invariant());
        assert!(!EnsembleSpec::Deterministic {
            matrices: vec![ComplexMatrix::identity(1)]
        }
        .is_phase_invariant());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(EnsembleSpec::Ginibre { n: 0, tau: 1.0 }.validate().is_err());
        assert!(EnsembleSpec::Ginibre { n: 3, tau: -1.0 }.validate().is_err());
        assert!(EnsembleSpec::Ginibre { n: 3, tau: f64::NAN }.validate().is_err());
        assert!(EnsembleSpec::BlockGinibre {
            sizes: vec![2, 2],
            tau: vec![vec![1.0]]
        }
        .validate()
        .is_err());
        assert!(EnsembleSpec::Deterministic { matrices: vec![] }.validate().is_err());
        assert!(sample(&EnsembleSpec::HaarUnitary { n: 0 }, id(0)).is_err());
    }

    #[test]
    fn haar_left_invariance_smoke() {
        // Tr(VU) has mean zero for Haar U and any fixed unitary V.
        let n = 6;
        let spec = EnsembleSpec::HaarUnitary { n };
        let v = sample_single(&spec, SampleIdentity::new(1, 0)).unwrap();
        let mut re = ScalarAccumulator::new();
        let mut im = ScalarAccumulator::new();
        for k in 0..2000 {
            let u = sample_single(&spec, id(k)).unwrap();
            let t = v.matmul(&u).trace();
            re.push(t.re);
            im.push(t.im);
        }
        assert!(re.mean().abs() <= 4.0 * re.standard_error());
        assert!(im.mean().abs() <= 4.0 * im.standard_error());
    }

    #[test]
    fn ginibre_entry_mean_vanishes() {
        let spec = EnsembleSpec::Ginibre { n: 3, tau: 1.0 };
        let mut re = ScalarAccumulator::new();
        for k in 0..2000 {
            re.push(sample_single(&spec, id(k)).unwrap()[(0, 1)].re);
        }
        assert!(re.mean().abs() <= 4.0 * re.standard_error());
    }
}
