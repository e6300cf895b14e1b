//! Creation operators on truncated Fock space and Monte Carlo checks of
//! localized von Neumann inequalities.
//!
//! The left creation operators act on the full Fock space over `d`
//! generators by `L^a e_w = e_{aw}`. For a noncommutative polynomial `f`,
//! `f(L)` restricted to words of length `<= D` is represented exactly by a
//! rectangular matrix, which yields a lower bound on `||f(L)||`; the
//! triangle inequality over the isometries `L^a` gives the upper bound.
//! Verdicts are three-valued so that neither Monte Carlo noise nor the norm
//! bracket can certify a false outcome.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample, EnsembleSpec, SampleIdentity};
use crate::error::{Error, Result};
use crate::kernel::{
    conditional_expectation, enumerate_words_capped, word_count, SubalgebraSpec, Word, DEFAULT_WORD_CAP,
};
use crate::numerics::{hermitian_eig, pinv_sqrt, psd_sqrt, spectral_norm, ComplexMatrix, DEFAULT_RANK_TOL};
use crate::parallel::chunked_sum;
use crate::stats::{MatrixAccumulator, ScalarAccumulator};

/// Largest polynomial degree accepted.
pub const DEGREE_CAP: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub word: Word,
    pub coeff: Complex64,
}

/// `f(Z) = sum_a c_a Z^a` in `d` noncommuting variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcPolynomial {
    d: usize,
    terms: Vec<Term>,
}

impl NcPolynomial {
    /// Merges repeated words and drops zero coefficients.
    pub fn new(d: usize, terms: impl IntoIterator<Item = (Word, Complex64)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("need at least one generator".into()));
        }
        let mut merged: BTreeMap<Word, Complex64> = BTreeMap::new();
        for (word, coeff) in terms {
            if let Some(&bad) = word.letters().iter().find(|&&l| l == 0 || l as usize > d) {
                return Err(Error::InvalidArgument(format!("letter {bad} outside 1..={d}")));
            }
            if word.len() > DEGREE_CAP {
                return Err(Error::InvalidArgument(format!(
                    "degree {} exceeds the cap of {DEGREE_CAP}",
                    word.len()
                )));
            }
            if !(coeff.re.is_finite() && coeff.im.is_finite()) {
                return Err(Error::InvalidArgument("coefficients must be finite".into()));
            }
            *merged.entry(word).or_default() += coeff;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| *c != Complex64::new(0.0, 0.0))
            .map(|(word, coeff)| Term { word, coeff })
            .collect();
        Ok(Self { d, terms })
    }

    pub fn monomial(d: usize, word: Word, coeff: Complex64) -> Result<Self> {
        Self::new(d, [(word, coeff)])
    }

    /// `sum_i c_i Z_i`.
    pub fn linear(coeffs: &[Complex64]) -> Result<Self> {
        Self::new(
            coeffs.len(),
            coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| (Word::new(vec![i as u32 + 1]), c)),
        )
    }

    pub fn generators(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.word.len()).max().unwrap_or(0)
    }

    /// `sum |c_a|`.
    pub fn l1_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.norm()).sum()
    }

    pub fn is_monomial(&self) -> bool {
        self.terms.len() == 1
    }

    /// Every term has length one.
    pub fn is_linear(&self) -> bool {
        !self.terms.is_empty() && self.terms.iter().all(|t| t.word.len() == 1)
    }

    /// `f(A_1, ..., A_d)`.
    pub fn evaluate(&self, gens: &[ComplexMatrix]) -> Result<ComplexMatrix> {
        if gens.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: format!("{} generators", self.d),
                found: format!("{}", gens.len()),
            });
        }
        let n = gens[0].rows();
        let mut cache: HashMap<Word, ComplexMatrix> = HashMap::new();
        cache.insert(Word::empty(), ComplexMatrix::identity(n));
        let mut out = ComplexMatrix::zeros(n, n);
        for term in &self.terms {
            let power = word_power(&term.word, gens, &mut cache);
            out.axpy(term.coeff, &power);
        }
        Ok(out)
    }
}

fn word_power(word: &Word, gens: &[ComplexMatrix], cache: &mut HashMap<Word, ComplexMatrix>) -> ComplexMatrix {
    if let Some(p) = cache.get(word) {
        return p.clone();
    }
    let (parent, letter) = word.parent().expect("empty word is cached");
    let p = word_power(&parent, gens, cache).matmul(&gens[letter as usize - 1]);
    cache.insert(word.clone(), p.clone());
    p
}

/// Matrix of `f(L)` from words of length `<= depth` into words of length
/// `<= depth + deg f`, so no image is truncated.
pub fn creation_matrix(f: &NcPolynomial, depth: usize) -> Result<ComplexMatrix> {
    creation_matrix_capped(f, depth, DEFAULT_WORD_CAP)
}

pub fn creation_matrix_capped(f: &NcPolynomial, depth: usize, cap: usize) -> Result<ComplexMatrix> {
    let d = f.d;
    let cols = enumerate_words_capped(d, depth, cap)?;
    let rows = word_count(d, depth + f.degree()).unwrap_or(usize::MAX);
    if rows > cap {
        return Err(Error::WordCap { count: rows, cap });
    }
    let mut m = ComplexMatrix::zeros(rows, cols.len());
    for (j, w) in cols.iter().enumerate() {
        for t in &f.terms {
            m[(t.word.concat(w).index(d), j)] += t.coeff;
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactReason {
    Monomial,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactNorm {
    pub value: f64,
    pub reason: ExactReason,
}

/// Bracket `lower <= ||f(L)|| <= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreationNormBound {
    pub depth: usize,
    pub lower: f64,
    pub upper: f64,
    pub exact: Option<ExactNorm>,
}

impl CreationNormBound {
    /// Best available lower bound.
    pub fn best_lower(&self) -> f64 {
        self.exact.map_or(self.lower, |e| e.value)
    }

    pub fn best_upper(&self) -> f64 {
        self.exact.map_or(self.upper, |e| e.value)
    }
}

fn exact_norm(f: &NcPolynomial) -> Option<ExactNorm> {
    if f.is_monomial() {
        // c L^a with L^a an isometry
        Some(ExactNorm {
            value: f.terms[0].coeff.norm(),
            reason: ExactReason::Monomial,
        })
    } else if f.is_linear() {
        // the L_i have orthogonal ranges, so sum c_i L_i is ||c||_2 times an isometry
        let l2 = f.terms.iter().map(|t| t.coeff.norm_sqr()).sum::<f64>().sqrt();
        Some(ExactNorm {
            value: l2,
            reason: ExactReason::Linear,
        })
    } else {
        None
    }
}

pub fn creation_norm(f: &NcPolynomial, depth: usize) -> Result<CreationNormBound> {
    creation_norm_capped(f, depth, DEFAULT_WORD_CAP)
}

pub fn creation_norm_capped(f: &NcPolynomial, depth: usize, cap: usize) -> Result<CreationNormBound> {
    let lower = if f.terms.is_empty() {
        0.0
    } else {
        spectral_norm(&creation_matrix_capped(f, depth, cap)?)?
    };
    Ok(CreationNormBound {
        depth,
        lower,
        upper: f.l1_norm(),
        exact: exact_norm(f),
    })
}

/// Truncated spaces explored by [`creation_norm_auto`] keep at most this
/// many columns, bounding the cost of each eigendecomposition.
pub const AUTO_COLUMN_CAP: usize = 1024;

/// Starts at depth `deg f + 6` and doubles until the lower bound moves by
/// less than `1e-6` or the next depth would exceed the word cap or
/// [`AUTO_COLUMN_CAP`].
pub fn creation_norm_auto(f: &NcPolynomial, cap: usize) -> Result<CreationNormBound> {
    let deg = f.degree();
    let mut depth = deg + 6;
    let fits = |depth: usize| {
        word_count(f.d, depth + deg).is_some_and(|c| c <= cap)
            && word_count(f.d, depth).is_some_and(|c| c <= AUTO_COLUMN_CAP)
    };
    while !fits(depth) && depth > 0 {
        depth -= 1;
    }
    let mut best = creation_norm_capped(f, depth, cap)?;
    loop {
        let next = depth * 2;
        if next == depth || !fits(next) {
            return Ok(best);
        }
        let candidate = creation_norm_capped(f, next, cap)?;
        let moved = candidate.lower - best.lower;
        best = candidate;
        depth = next;
        if moved.abs() < 1e-6 {
            return Ok(best);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VnVerdict {
    CertifiedPass,
    CertifiedFail,
    Inconclusive,
}

/// Sampling and decision parameters of the von Neumann checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VnSettings {
    pub samples: u64,
    pub seed: u64,
    /// Fock truncation depth; `None` selects it automatically.
    pub depth: Option<usize>,
    pub z: f64,
}

/// Relative slack for floating-point rounding at the boundary.
const ROUNDING: f64 = 1e-10;

fn decide(value: f64, se_pass: f64, se_fail: f64, bounds: &CreationNormBound, scale: f64, z: f64) -> VnVerdict {
    let lo = bounds.best_lower().powi(2) * scale;
    let hi = bounds.best_upper().powi(2) * scale;
    let slack = ROUNDING * hi.max(1.0);
    if value <= lo - z * se_pass + slack {
        VnVerdict::CertifiedPass
    } else if value > hi + z * se_fail + slack {
        VnVerdict::CertifiedFail
    } else {
        VnVerdict::Inconclusive
    }
}

fn resolve_bounds(f: &NcPolynomial, depth: Option<usize>) -> Result<CreationNormBound> {
    match depth {
        Some(d) => creation_norm(f, d),
        None => creation_norm_auto(f, DEFAULT_WORD_CAP),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VnCheck {
    /// `E_B(Y^{1/2} X Y^{1/2})` with `X = mean of f(A) f(A)^*`.
    #[serde(skip)]
    pub lhs: ComplexMatrix,
    pub lhs_diagonal: Vec<f64>,
    /// Largest eigenvalue of `Y^{+1/2} lhs Y^{+1/2}` on the range of `Y`.
    pub lambda_max: f64,
    /// Standard error of `lambda_max` from the top eigenvector.
    pub se_eig: f64,
    /// Frobenius norm of the entrywise standard errors of the comparison matrix.
    pub se_frob: f64,
    pub y_rank: usize,
    pub bounds: CreationNormBound,
    pub verdict: VnVerdict,
}

/// Checks `E_B(Y^{1/2} X Y^{1/2}) <= ||f(L)||^2 Y` with `X = E[f(A) f(A)^*]`.
///
/// The comparison uses `Y^{+1/2}` on the range of `Y`, so `Y` may be
/// singular. Certified pass needs `lambda_max <= lower^2 - z se_eig`;
/// certified fail needs `lambda_max > upper^2 + z se_frob`, where the
/// Frobenius error bounds any eigenvalue perturbation.
pub fn vn_check(
    spec: &EnsembleSpec,
    f: &NcPolynomial,
    b: &SubalgebraSpec,
    y: Option<&ComplexMatrix>,
    settings: &VnSettings,
) -> Result<VnCheck> {
    spec.validate()?;
    let n = spec.dim();
    b.validate(n)?;
    if f.generators() != spec.generators() {
        return Err(Error::DimensionMismatch {
            expected: format!("polynomial in {} variables", spec.generators()),
            found: format!("{} variables", f.generators()),
        });
    }
    if settings.samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let y = match y {
        Some(y) => {
            if y.rows() != n || y.cols() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n}x{n} weight"),
                    found: format!("{}x{}", y.rows(), y.cols()),
                });
            }
            y.clone()
        }
        None => ComplexMatrix::identity(n),
    };
    let defect = b.membership_defect(&y)?;
    if defect > 1e-10 * (1.0 + y.max_abs()) {
        return Err(Error::NotInSubalgebra { defect });
    }
    let root = psd_sqrt(&y, 1e-10)?;
    let weight = pinv_sqrt(&y, DEFAULT_RANK_TOL)?;
    let bounds = resolve_bounds(f, settings.depth)?;

    let per_sample = |k: u64| -> Result<(ComplexMatrix, ComplexMatrix)> {
        let gens = sample(spec, SampleIdentity::new(settings.seed, k))?;
        let fa = f.evaluate(&gens)?;
        let x = fa.mul_adjoint(&fa);
        if !x.is_finite() {
            return Err(Error::NonFiniteSample { index: k });
        }
        let local = conditional_expectation(&root.matmul(&x).matmul(&root), b)?;
        let cmp = weight.w.matmul(&local).matmul(&weight.w);
        Ok((local, cmp))
    };

    let (lhs_acc, cmp_acc) = chunked_sum(
        settings.samples,
        || (MatrixAccumulator::new(n, n), MatrixAccumulator::new(n, n)),
        |acc, k| {
            let (local, cmp) = per_sample(k)?;
            acc.0.push(&local);
            acc.1.push(&cmp);
            Ok(())
        },
        |total, part| {
            total.0.merge(&part.0);
            total.1.merge(&part.1);
        },
    )?;
    let lhs = lhs_acc.mean().hermitian_part();
    let cmp = cmp_acc.mean().hermitian_part();
    let eig = hermitian_eig(&cmp)?;
    let lambda_max = eig.max();
    let top = eig.eigenvectors.col(n - 1);
    let top = ComplexMatrix::column(&top);

    // Second pass over the same streams: spread of v^* Z_s v along the top eigenvector.
    let quad = chunked_sum(
        settings.samples,
        ScalarAccumulator::new,
        |acc, k| {
            let (_, cmp) = per_sample(k)?;
            acc.push(top.adjoint_mul(&cmp.matmul(&top))[(0, 0)].re);
            Ok(())
        },
        |total, part| total.merge(&part),
    )?;
    let se_eig = quad.standard_error();
    let se_frob = cmp_acc.frobenius_se();
    let verdict = decide(lambda_max, se_eig, se_frob, &bounds, 1.0, settings.z);

    Ok(VnCheck {
        lhs_diagonal: lhs.diagonal().iter().map(|z| z.re).collect(),
        lhs,
        lambda_max,
        se_eig,
        se_frob,
        y_rank: weight.rank,
        bounds,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorCheck {
    /// Mean of `||f(A)^* v||^2`.
    pub lhs: f64,
    pub se: f64,
    /// `lower^2 ||v||^2`.
    pub rhs_lower: f64,
    /// `upper^2 ||v||^2`.
    pub rhs_upper: f64,
    pub bounds: CreationNormBound,
    pub verdict: VnVerdict,
}

/// Checks `E ||f(A)^* v||^2 <= ||f(L)||^2 ||v||^2`.
pub fn vector_bound_check(
    spec: &EnsembleSpec,
    f: &NcPolynomial,
    v: &[Complex64],
    settings: &VnSettings,
) -> Result<VectorCheck> {
    spec.validate()?;
    let n = spec.dim();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("vector of length {n}"),
            found: format!("{}", v.len()),
        });
    }
    let norm_sqr: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if norm_sqr == 0.0 {
        return Err(Error::InvalidArgument("vector must be nonzero".into()));
    }
    if settings.samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if f.generators() != spec.generators() {
        return Err(Error::DimensionMismatch {
            expected: format!("polynomial in {} variables", spec.generators()),
            found: format!("{} variables", f.generators()),
        });
    }
    let bounds = resolve_bounds(f, settings.depth)?;
    let col = ComplexMatrix::column(v);
    let acc = chunked_sum(
        settings.samples,
        ScalarAccumulator::new,
        |acc, k| {
            let gens = sample(spec, SampleIdentity::new(settings.seed, k))?;
            let fa = f.evaluate(&gens)?;
            let img = fa.adjoint_mul(&col);
            let value = img.norm_sqr();
            if !value.is_finite() {
                return Err(Error::NonFiniteSample { index: k });
            }
            acc.push(value);
            Ok(())
        },
        |total, part| total.merge(&part),
    )?;
    let est = acc.summary();
    Ok(VectorCheck {
        lhs: est.mean,
        se: est.se,
        rhs_lower: bounds.best_lower().powi(2) * norm_sqr,
        rhs_upper: bounds.best_upper().powi(2) * norm_sqr,
        verdict: decide(est.mean, est.se, est.se, &bounds, norm_sqr, settings.z),
        bounds,
    })
}
