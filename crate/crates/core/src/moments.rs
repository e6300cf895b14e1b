//! Scalar moment sequences, the moment-ratio test and analytic reference
//! values.
//!
//! For a bi-unitarily invariant law the moment kernel collapses to
//! `K(m, n) = δ_{mn} c_m I` with `c_m = (1/N) Tr E[A^m (A^m)^*]`, and the
//! shifted kernel is dominated exactly when `c_{m+1} <= c_m` for every `m`.
//! Block-diagonal invariance gives one such sequence per block.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_single, EnsembleSpec, SampleIdentity};
use crate::error::{Error, Result};
use crate::kernel::block_ranges;
use crate::numerics::ComplexMatrix;
use crate::parallel::chunked_sum;
use crate::stats::ScalarAccumulator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MomentKind {
    /// `c_m = (1/N) Tr A^m (A^m)^*`.
    C,
    /// `d_m = (1/N) Tr (A^* A)^m`.
    D,
    /// `c^{(r)}_m = (1/k_r) Tr P_r A^m (A^m)^* P_r`, blocks numbered from 1.
    CBlock { block: usize },
    /// `c_m - d_m`, averaged per sample.
    CMinusD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub kind: MomentKind,
    /// Indexed by `m = 0..=M`.
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub samples: u64,
    pub ensemble: String,
    /// Values follow from unitarity without sampling.
    pub exact: bool,
}

impl MomentSequence {
    pub fn order(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// All sequences computed from one pass over the sample stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTables {
    pub c: MomentSequence,
    pub d: Option<MomentSequence>,
    pub c_minus_d: Option<MomentSequence>,
    pub blocks: Vec<MomentSequence>,
}

/// Which sequences [`moment_tables`] computes besides `c`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentRequest {
    pub order: usize,
    pub with_d: bool,
    pub block_sizes: Option<Vec<usize>>,
}

struct PassAccumulators {
    c: Vec<ScalarAccumulator>,
    d: Vec<ScalarAccumulator>,
    diff: Vec<ScalarAccumulator>,
    blocks: Vec<Vec<ScalarAccumulator>>,
}

impl PassAccumulators {
    fn new(order: usize, with_d: bool, nblocks: usize) -> Self {
        let row = || vec![ScalarAccumulator::new(); order + 1];
        Self {
            c: row(),
            d: if with_d { row() } else { Vec::new() },
            diff: if with_d { row() } else { Vec::new() },
            blocks: (0..nblocks).map(|_| row()).collect(),
        }
    }

    fn merge(&mut self, other: &Self) {
        let pairs = self
            .c
            .iter_mut()
            .zip(&other.c)
            .chain(self.d.iter_mut().zip(&other.d))
            .chain(self.diff.iter_mut().zip(&other.diff))
            .chain(self.blocks.iter_mut().flatten().zip(other.blocks.iter().flatten()));
        for (a, b) in pairs {
            a.merge(b);
        }
    }
}

fn sequence(kind: MomentKind, acc: &[ScalarAccumulator], samples: u64, spec: &EnsembleSpec) -> MomentSequence {
    MomentSequence {
        kind,
        values: acc.iter().map(ScalarAccumulator::mean).collect(),
        se: acc.iter().map(ScalarAccumulator::standard_error).collect(),
        samples,
        ensemble: spec.label(),
        exact: false,
    }
}

fn exact_ones(kind: MomentKind, order: usize, samples: u64, spec: &EnsembleSpec) -> MomentSequence {
    MomentSequence {
        kind,
        values: vec![1.0; order + 1],
        se: vec![0.0; order + 1],
        samples,
        ensemble: spec.label(),
        exact: true,
    }
}

/// `sum_{i in rows} ||row_i(P)||^2 / |rows|`.
fn row_block_mass(p: &ComplexMatrix, rows: std::ops::Range<usize>) -> f64 {
    let n = p.cols();
    let k = rows.len() as f64;
    let slice = &p.as_slice()[rows.start * n..rows.end * n];
    slice.iter().map(|z| z.norm_sqr()).sum::<f64>() / k
}

/// Computes `c` and, on request, `d`, `c - d` and per-block `c^{(r)}` from
/// the same samples, so that differences have correlated-sample variance.
///
/// Haar unitary samples take an exact path: every `A^m` is unitary, so each
/// per-sample value is exactly 1.
pub fn moment_tables(spec: &EnsembleSpec, req: &MomentRequest, samples: u64, seed: u64) -> Result<MomentTables> {
    spec.validate()?;
    if spec.generators() != 1 {
        return Err(Error::InvalidArgument(format!(
            "moment sequences need a single generator, got d = {}",
            spec.generators()
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "moment sequences need at least 2 samples".into(),
        ));
    }
    let n = spec.dim();
    let ranges = match &req.block_sizes {
        Some(sizes) => {
            let total: usize = sizes.iter().sum();
            if sizes.is_empty() || sizes.contains(&0) || total != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("positive block sizes summing to {n}"),
                    found: format!("{sizes:?}"),
                });
            }
            block_ranges(sizes)
        }
        None => Vec::new(),
    };
    let order = req.order;

    if spec.is_unitary() {
        let zeros = MomentSequence {
            kind: MomentKind::CMinusD,
            values: vec![0.0; order + 1],
            se: vec![0.0; order + 1],
            samples,
            ensemble: spec.label(),
            exact: true,
        };
        return Ok(MomentTables {
            c: exact_ones(MomentKind::C, order, samples, spec),
            d: req.with_d.then(|| exact_ones(MomentKind::D, order, samples, spec)),
            c_minus_d: req.with_d.then_some(zeros),
            blocks: (1..=ranges.len())
                .map(|r| exact_ones(MomentKind::CBlock { block: r }, order, samples, spec))
                .collect(),
        });
    }

    let acc = chunked_sum(
        samples,
        || PassAccumulators::new(order, req.with_d, ranges.len()),
        |acc, k| {
            let a = sample_single(spec, SampleIdentity::new(seed, k))?;
            let nf = n as f64;
            let mut power = ComplexMatrix::identity(n);
            let mut c_vals = Vec::with_capacity(order + 1);
            for m in 0..=order {
                if m > 0 {
                    power = power.matmul(&a);
                    if !power.is_finite() {
                        return Err(Error::NonFiniteSample { index: k });
                    }
                }
                let c = if m == 0 { 1.0 } else { power.norm_sqr() / nf };
                c_vals.push(c);
                acc.c[m].push(c);
                for (r, range) in ranges.iter().enumerate() {
                    let v = if m == 0 {
                        1.0
                    } else {
                        row_block_mass(&power, range.clone())
                    };
                    acc.blocks[r][m].push(v);
                }
            }
            if req.with_d {
                let gram = a.adjoint_mul(&a);
                let mut power = ComplexMatrix::identity(n);
                for (m, &c) in c_vals.iter().enumerate() {
                    let d = if m == 0 {
                        1.0
                    } else {
                        power = power.matmul(&gram);
                        if !power.is_finite() {
                            return Err(Error::NonFiniteSample { index: k });
                        }
                        power.trace().re / nf
                    };
                    acc.d[m].push(d);
                    acc.diff[m].push(c - d);
                }
            }
            Ok(())
        },
        |total, part| total.merge(&part),
    )?;

    Ok(MomentTables {
        c: sequence(MomentKind::C, &acc.c, samples, spec),
        d: req.with_d.then(|| sequence(MomentKind::D, &acc.d, samples, spec)),
        c_minus_d: req
            .with_d
            .then(|| sequence(MomentKind::CMinusD, &acc.diff, samples, spec)),
        blocks: acc
            .blocks
            .iter()
            .enumerate()
            .map(|(r, a)| sequence(MomentKind::CBlock { block: r + 1 }, a, samples, spec))
            .collect(),
    })
}

/// `c_m = (1/N) Tr E[A^m (A^m)^*]` for `m = 0..=order`.
pub fn c_sequence(spec: &EnsembleSpec, order: usize, samples: u64, seed: u64) -> Result<MomentSequence> {
    let req = MomentRequest {
        order,
        ..Default::default()
    };
    Ok(moment_tables(spec, &req, samples, seed)?.c)
}

/// `d_m = (1/N) E[Tr (A^* A)^m]` for `m = 0..=order`.
pub fn d_sequence(spec: &EnsembleSpec, order: usize, samples: u64, seed: u64) -> Result<MomentSequence> {
    let req = MomentRequest {
        order,
        with_d: true,
        ..Default::default()
    };
    Ok(moment_tables(spec, &req, samples, seed)?.d.expect("requested"))
}

/// Per-block `c^{(r)}_m = (1/k_r) Tr E[P_r A^m (A^m)^* P_r]`.
pub fn block_c_sequence(
    spec: &EnsembleSpec,
    sizes: &[usize],
    order: usize,
    samples: u64,
    seed: u64,
) -> Result<Vec<MomentSequence>> {
    let req = MomentRequest {
        order,
        with_d: false,
        block_sizes: Some(sizes.to_vec()),
    };
    Ok(moment_tables(spec, &req, samples, seed)?.blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioStep {
    pub m: usize,
    /// `c_{m+1} / c_m`; `None` when `c_m` is indistinguishable from zero.
    pub ratio: Option<f64>,
    /// `c_m - c_{m+1}`.
    pub margin: f64,
    /// `sqrt(se_m^2 + se_{m+1}^2)`.
    pub margin_se: f64,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioVerdict {
    pub kind: MomentKind,
    pub z: f64,
    pub steps: Vec<RatioStep>,
    pub overall: Flag,
    pub first_failing: Option<usize>,
}

/// Relative slack for floating-point rounding in the comparisons.
const ROUNDING: f64 = 1e-12;

/// One-sided test of `c_{m+1} <= c_m` at `z` combined standard errors.
pub fn ratio_test(seq: &MomentSequence, z: f64) -> RatioVerdict {
    let steps: Vec<RatioStep> = (0..seq.order())
        .map(|m| {
            let (cur, next) = (seq.values[m], seq.values[m + 1]);
            let margin_se = seq.se[m].hypot(seq.se[m + 1]);
            let degenerate = cur <= z * seq.se[m] || cur <= 0.0;
            let flag = if degenerate {
                Flag::Inconclusive
            } else if next <= cur + z * margin_se + ROUNDING * cur.abs() {
                Flag::Pass
            } else {
                Flag::Fail
            };
            RatioStep {
                m,
                ratio: (!degenerate).then(|| next / cur),
                margin: cur - next,
                margin_se,
                flag,
            }
        })
        .collect();
    let first_failing = steps.iter().find(|s| s.flag == Flag::Fail).map(|s| s.m);
    let overall = if first_failing.is_some() {
        Flag::Fail
    } else if steps.iter().all(|s| s.flag == Flag::Pass) {
        Flag::Pass
    } else {
        Flag::Inconclusive
    };
    RatioVerdict {
        kind: seq.kind,
        z,
        steps,
        overall,
        first_failing,
    }
}

/// Exact `binom(n, k)`, `None` on `u128` overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact; divide out the gcd first to delay overflow.
        let num = (n - i) as u128;
        let den = (i + 1) as u128;
        let g = gcd(acc, den);
        let (acc_r, den_r) = (acc / g, den / g);
        let g2 = gcd(num, den_r);
        acc = acc_r.checked_mul(num / g2)? / (den_r / g2);
    }
    Some(acc)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Catalan number `C_m = binom(2m, m) / (m + 1)`.
pub fn catalan(m: u64) -> Result<u128> {
    let b = binomial(2 * m, m).ok_or_else(|| Error::Overflow(format!("binom({}, {m})", 2 * m)))?;
    Ok(b / (m as u128 + 1))
}

/// Fuss-Catalan moment `binom((m+1)p, p) / (mp + 1)` as an exact rational.
pub fn fuss_catalan_moment(m: u64, p: u64) -> Result<Ratio<u128>> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    let top = (m + 1)
        .checked_mul(p)
        .ok_or_else(|| Error::Overflow(format!("(m+1)p for m={m}, p={p}")))?;
    let b = binomial(top, p).ok_or_else(|| Error::Overflow(format!("binom({top}, {p})")))?;
    let den = m
        .checked_mul(p)
        .and_then(|x| x.checked_add(1))
        .ok_or_else(|| Error::Overflow(format!("mp+1 for m={m}, p={p}")))?;
    Ok(Ratio::new(b, den as u128))
}

/// Narayana coefficient `binom(k, r) binom(k-1, r) / (r + 1)`, exact when it fits.
fn narayana(k: u64, r: u64) -> Option<u128> {
    let a = binomial(k, r)?;
    let b = binomial(k - 1, r)?;
    // gcd(a', d') = 1 and d' | a b, so d' | b.
    let g = gcd(a, r as u128 + 1);
    let d = (r as u128 + 1) / g;
    (a / g).checked_mul(b / d)
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Marchenko-Pastur moment
/// `beta_k(y, sigma2) = sigma2^k sum_{r<k} binom(k,r) binom(k-1,r) y^r / (r+1)`.
///
/// Coefficients are exact integers while they fit in `u128` and fall back
/// to log-space floating point beyond.
pub fn mp_moment(k: u64, y: f64, sigma2: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(y > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument("y and sigma2 must be positive".into()));
    }
    let sum: f64 = (0..k)
        .map(|r| {
            let coef = match narayana(k, r) {
                Some(c) => c as f64,
                None => (ln_binomial(k, r) + ln_binomial(k - 1, r) - ((r + 1) as f64).ln()).exp(),
            };
            coef * y.powi(r as i32)
        })
        .sum();
    Ok(sigma2.powi(k as i32) * sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub m: usize,
    pub measured: f64,
    pub se: f64,
    pub limit: f64,
    pub deviation: f64,
    /// `deviation / se`; infinite when `se = 0` and the deviation is not.
    pub z_score: f64,
}

/// Large-`N` Ginibre limit of the sequence at index `m` for scale `tau`:
/// `tau^m` for `c`, `tau^m C_m` for `d` and `tau^m (1 - C_m)` for `c - d`.
pub fn asymptotic_limit(kind: MomentKind, tau: f64, m: usize) -> Result<f64> {
    let t = tau.powi(m as i32);
    Ok(match kind {
        MomentKind::C | MomentKind::CBlock { .. } => t,
        MomentKind::D => t * catalan(m as u64)? as f64,
        MomentKind::CMinusD => t * (1.0 - catalan(m as u64)? as f64),
    })
}

pub fn asymptotic_report(seq: &MomentSequence, tau: f64, kind: MomentKind) -> Result<Vec<AsymptoticRow>> {
    let same = match (seq.kind, kind) {
        (MomentKind::CBlock { .. }, MomentKind::C) => true,
        (a, b) => a == b,
    };
    if !same {
        return Err(Error::InvalidArgument(format!(
            "sequence kind {:?} does not match {:?}",
            seq.kind, kind
        )));
    }
    (0..seq.values.len())
        .map(|m| {
            let limit = asymptotic_limit(kind, tau, m)?;
            let deviation = seq.values[m] - limit;
            let se = seq.se[m];
            let z_score = if se > 0.0 {
                deviation / se
            } else if deviation == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(deviation)
            };
            Ok(AsymptoticRow {
                m,
                measured: seq.values[m],
                se,
                limit,
                deviation,
                z_score,
            })
        })
        .collect()
}
