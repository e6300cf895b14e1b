//! Moment kernels `K(a, b) = E[A^a (A^b)^*]` indexed by words over `d`
//! generators, their conditional expectations onto subalgebras of `M_N`,
//! the shifted kernel, and truncated Gram matrices.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample, EnsembleSpec, SampleIdentity};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, ComplexMatrix};
use crate::parallel::chunked_sum;
use crate::stats::MatrixAccumulator;

/// Default cap on the number of words in any truncation.
pub const DEFAULT_WORD_CAP: usize = 10_000;

/// Element of the free semigroup on generators `1..=d`; the empty word is
/// the neutral element.
///
/// Words order by length first, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<u32>);

impl Word {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(letters: Vec<u32>) -> Self {
        Self(letters)
    }

    /// `letter^power`.
    pub fn power(letter: u32, power: usize) -> Self {
        Self(vec![letter; power])
    }

    pub fn letters(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    pub fn concat(&self, other: &Word) -> Self {
        let mut letters = self.0.clone();
        letters.extend_from_slice(&other.0);
        Self(letters)
    }

    /// The word followed by one more letter.
    pub fn append(&self, letter: u32) -> Self {
        let mut letters = self.0.clone();
        letters.push(letter);
        Self(letters)
    }

    /// Word without its last letter, `None` for the empty word.
    pub fn parent(&self) -> Option<(Word, u32)> {
        let (&last, rest) = self.0.split_last()?;
        Some((Self(rest.to_vec()), last))
    }

    pub fn max_letter(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Position of this word in [`enumerate_words`] order for `d` generators.
    pub fn index(&self, d: usize) -> usize {
        let mut offset = 0usize;
        let mut layer = 1usize;
        for _ in 0..self.len() {
            offset += layer;
            layer *= d;
        }
        let within = self
            .0
            .iter()
            .fold(0usize, |acc, &letter| acc * d + (letter as usize - 1));
        offset + within
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        let wide = self.0.iter().any(|&l| l > 9);
        for (k, l) in self.0.iter().enumerate() {
            if wide && k > 0 {
                write!(f, ".")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// `sum_{k <= max_len} d^k`, or `None` on overflow.
pub fn word_count(d: usize, max_len: usize) -> Option<usize> {
    let mut total = 0usize;
    let mut layer = 1usize;
    for k in 0..=max_len {
        total = total.checked_add(layer)?;
        if k < max_len {
            layer = layer.checked_mul(d)?;
        }
    }
    Some(total)
}

/// All words of length `<= max_len`, ordered by length then lexicographically.
pub fn enumerate_words(d: usize, max_len: usize) -> Result<Vec<Word>> {
    enumerate_words_capped(d, max_len, DEFAULT_WORD_CAP)
}

pub fn enumerate_words_capped(d: usize, max_len: usize, cap: usize) -> Result<Vec<Word>> {
    if d == 0 {
        return Err(Error::InvalidArgument("need at least one generator".into()));
    }
    let count = word_count(d, max_len).unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::WordCap { count, cap });
    }
    let mut words = Vec::with_capacity(count);
    words.push(Word::empty());
    let mut layer_start = 0;
    for _ in 0..max_len {
        let layer_end = words.len();
        for k in layer_start..layer_end {
            for letter in 1..=d as u32 {
                let w = words[k].append(letter);
                words.push(w);
            }
        }
        layer_start = layer_end;
    }
    Ok(words)
}

/// Target subalgebra of a conditional expectation on `M_N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubalgebraSpec {
    Full,
    Diagonal,
    Blocks { sizes: Vec<usize> },
    Scalar,
}

/// Index ranges of consecutive blocks.
pub fn block_ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&k| {
            let r = start..start + k;
            start += k;
            r
        })
        .collect()
}

impl SubalgebraSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let SubalgebraSpec::Blocks { sizes } = self {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::InvalidArgument("block sizes must be positive".into()));
            }
            let total: usize = sizes.iter().sum();
            if total != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("block sizes summing to {n}"),
                    found: format!("sum {total}"),
                });
            }
        }
        Ok(())
    }

    /// `max |E_B(Y) - Y|`, zero exactly when `Y` lies in the subalgebra.
    pub fn membership_defect(&self, y: &ComplexMatrix) -> Result<f64> {
        Ok(conditional_expectation(y, self)?.max_abs_diff(y))
    }

    pub fn label(&self) -> String {
        match self {
            SubalgebraSpec::Full => "full".into(),
            SubalgebraSpec::Diagonal => "diagonal".into(),
            SubalgebraSpec::Blocks { sizes } => format!("blocks{sizes:?}"),
            SubalgebraSpec::Scalar => "scalar".into(),
        }
    }
}

/// Conditional expectation `E_B` onto the subalgebra `b`.
///
/// Full is the identity map, Diagonal keeps the diagonal, Blocks keeps the
/// diagonal blocks `P_r X P_r`, and Scalar maps `X` to `(Tr X / N) I`.
pub fn conditional_expectation(x: &ComplexMatrix, b: &SubalgebraSpec) -> Result<ComplexMatrix> {
    let n = x.ensure_square()?;
    b.validate(n)?;
    Ok(match b {
        SubalgebraSpec::Full => x.clone(),
        SubalgebraSpec::Diagonal => {
            let mut out = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                out[(i, i)] = x[(i, i)];
            }
            out
        }
        SubalgebraSpec::Blocks { sizes } => {
            let mut out = ComplexMatrix::zeros(n, n);
            for r in block_ranges(sizes) {
                for i in r.clone() {
                    for j in r.clone() {
                        out[(i, j)] = x[(i, j)];
                    }
                }
            }
            out
        }
        SubalgebraSpec::Scalar => {
            if n == 0 {
                return Ok(x.clone());
            }
            ComplexMatrix::scalar(n, x.trace() / n as f64)
        }
    })
}

/// Opt-in structure imposed on Monte Carlo kernel blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforcement {
    #[default]
    None,
    /// Zero blocks with `|a| != |b|`.
    Phase,
    /// Phase, and replace each block `K(a, a)` by `(Tr K(a, a) / N) I`.
    Biunitary,
    /// Phase, and replace each block `K(a, a)` by `⊕_r c_r I_{k_r}` with
    /// `c_r = Tr(P_r K P_r) / k_r`; needs a `Blocks` subalgebra.
    Block,
}

/// Monte Carlo estimate of the moment kernel over all words of length `<= max_len`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub d: usize,
    pub n: usize,
    pub max_len: usize,
    pub samples: u64,
    pub seed: u64,
    pub ensemble: String,
    pub phase_invariant: bool,
    words: Vec<Word>,
    /// Upper triangle `i <= j`, row-major in `tri(i, j)`.
    blocks: Vec<ComplexMatrix>,
    se: Vec<f64>,
}

fn tri(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

impl KernelEstimate {
    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn word_index(&self, w: &Word) -> Option<usize> {
        if w.len() > self.max_len || w.letters().iter().any(|&l| l == 0 || l as usize > self.d) {
            return None;
        }
        Some(w.index(self.d))
    }

    /// `K(words[i], words[j])`.
    pub fn block(&self, i: usize, j: usize) -> ComplexMatrix {
        if i <= j {
            self.blocks[tri(i, j)].clone()
        } else {
            self.blocks[tri(j, i)].adjoint()
        }
    }

    /// Frobenius-aggregated standard error of block `(i, j)`.
    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.se[tri(i.min(j), i.max(j))]
    }

    pub fn block_for(&self, a: &Word, b: &Word) -> Result<ComplexMatrix> {
        Ok(self.block(self.require(a)?, self.require(b)?))
    }

    pub fn se_for(&self, a: &Word, b: &Word) -> Result<f64> {
        Ok(self.se(self.require(a)?, self.require(b)?))
    }

    fn require(&self, w: &Word) -> Result<usize> {
        self.word_index(w).ok_or(Error::OrderExceeded {
            requested: w.len(),
            available: self.max_len,
        })
    }

    /// Largest block standard error.
    pub fn max_se(&self) -> f64 {
        self.se.iter().copied().fold(0.0, f64::max)
    }
}

/// Estimates `K(a, b) = (1/S) sum_s A_s^a (A_s^b)^*` for all words of length
/// `<= max_len`, where `A^a` multiplies the letters left to right and
/// `A^∅ = I`.
///
/// Callers that need the shifted kernel up to order `M` must pass
/// `max_len = M + 1`.
pub fn estimate_kernel(spec: &EnsembleSpec, max_len: usize, samples: u64, seed: u64) -> Result<KernelEstimate> {
    estimate_kernel_capped(spec, max_len, samples, seed, DEFAULT_WORD_CAP)
}

pub fn estimate_kernel_capped(
    spec: &EnsembleSpec,
    max_len: usize,
    samples: u64,
    seed: u64,
    word_cap: usize,
) -> Result<KernelEstimate> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let d = spec.generators();
    let n = spec.dim();
    let words = enumerate_words_capped(d, max_len, word_cap)?;
    let w = words.len();
    let pairs = w * (w + 1) / 2;
    let parents: Vec<Option<(usize, usize)>> = words
        .iter()
        .map(|word| word.parent().map(|(p, l)| (p.index(d), l as usize - 1)))
        .collect();
    let unitary = spec.is_unitary();

    let accumulators = chunked_sum(
        samples,
        || vec![MatrixAccumulator::new(n, n); pairs],
        |acc, k| {
            let gens = sample(spec, SampleIdentity::new(seed, k))?;
            let mut powers: Vec<ComplexMatrix> = Vec::with_capacity(w);
            for parent in &parents {
                let p = match parent {
                    None => ComplexMatrix::identity(n),
                    Some((pi, letter)) => powers[*pi].matmul(&gens[*letter]),
                };
                if !p.is_finite() {
                    return Err(Error::NonFiniteSample { index: k });
                }
                powers.push(p);
            }
            let adjoints: Vec<ComplexMatrix> = powers.iter().map(ComplexMatrix::adjoint).collect();
            for j in 0..w {
                for i in 0..=j {
                    if unitary && i == j {
                        acc[tri(i, j)].push(&ComplexMatrix::identity(n));
                    } else {
                        acc[tri(i, j)].push(&powers[i].matmul(&adjoints[j]));
                    }
                }
            }
            Ok(())
        },
        |total, part| {
            for (t, p) in total.iter_mut().zip(&part) {
                t.merge(p);
            }
        },
    )?;

    let mut blocks = Vec::with_capacity(pairs);
    let mut se = Vec::with_capacity(pairs);
    for j in 0..w {
        for i in 0..=j {
            let acc = &accumulators[tri(i, j)];
            let mut mean = acc.mean();
            if i == j {
                mean = mean.hermitian_part();
            }
            blocks.push(mean);
            se.push(acc.frobenius_se());
        }
    }
    Ok(KernelEstimate {
        d,
        n,
        max_len,
        samples,
        seed,
        ensemble: spec.label(),
        phase_invariant: spec.is_phase_invariant(),
        words,
        blocks,
        se,
    })
}

/// Kernel blocks over an ordered word list, stored as a Hermitian family.
#[derive(Clone, Debug)]
pub struct KernelSection {
    pub n: usize,
    pub words: Vec<Word>,
    blocks: Vec<ComplexMatrix>,
    se: Vec<f64>,
}

impl KernelSection {
    pub fn block(&self, i: usize, j: usize) -> ComplexMatrix {
        if i <= j {
            self.blocks[tri(i, j)].clone()
        } else {
            self.blocks[tri(j, i)].adjoint()
        }
    }

    pub fn block_for(&self, a: &Word, b: &Word) -> Option<ComplexMatrix> {
        let i = self.words.iter().position(|w| w == a)?;
        let j = self.words.iter().position(|w| w == b)?;
        Some(self.block(i, j))
    }

    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.se[tri(i.min(j), i.max(j))]
    }

    /// Bound on the Frobenius error of the assembled matrix: root sum of
    /// squared block errors over all ordered pairs.
    pub fn total_se(&self) -> f64 {
        let w = self.words.len();
        let mut total = 0.0;
        for j in 0..w {
            for i in 0..=j {
                let s = self.se[tri(i, j)];
                total += if i == j { s * s } else { 2.0 * s * s };
            }
        }
        total.sqrt()
    }

    /// The `W N x W N` block matrix `[K(words[i], words[j])]`.
    pub fn to_matrix(&self) -> ComplexMatrix {
        let w = self.words.len();
        let n = self.n;
        let mut g = ComplexMatrix::zeros(w * n, w * n);
        for j in 0..w {
            for i in 0..=j {
                let b = &self.blocks[tri(i, j)];
                g.set_block(i * n, j * n, b);
                if i != j {
                    g.set_block(j * n, i * n, &b.adjoint());
                }
            }
        }
        g
    }
}

/// `E_B` of the enforced raw block `K(words[i], words[j])`, with its standard error.
fn enforced_block(
    k: &KernelEstimate,
    i: usize,
    j: usize,
    b: &SubalgebraSpec,
    enforce: Enforcement,
) -> Result<(ComplexMatrix, f64)> {
    let n = k.n;
    let (wi, wj) = (&k.words[i], &k.words[j]);
    let raw = k.block(i, j);
    let se = k.se(i, j);
    if enforce != Enforcement::None && wi.len() != wj.len() {
        return Ok((ComplexMatrix::zeros(n, n), 0.0));
    }
    let (structured, se) = match enforce {
        Enforcement::Biunitary if i == j => (
            ComplexMatrix::scalar(n, Complex64::new(raw.trace().re / n as f64, 0.0)),
            se / (n as f64).sqrt(),
        ),
        Enforcement::Block if i == j => {
            let SubalgebraSpec::Blocks { sizes } = b else {
                return Err(Error::InvalidArgument(
                    "block enforcement needs a blocks subalgebra".into(),
                ));
            };
            b.validate(n)?;
            let mut out = ComplexMatrix::zeros(n, n);
            for r in block_ranges(sizes) {
                let k_r = r.len() as f64;
                let c: f64 = r.clone().map(|t| raw[(t, t)].re).sum::<f64>() / k_r;
                for t in r {
                    out[(t, t)] = Complex64::new(c, 0.0);
                }
            }
            let smallest = sizes.iter().copied().min().unwrap_or(1) as f64;
            (out, se / smallest.sqrt())
        }
        _ => (raw, se),
    };
    Ok((conditional_expectation(&structured, b)?, se))
}

fn check_enforcement(enforce: Enforcement, b: &SubalgebraSpec) -> Result<()> {
    if enforce == Enforcement::Block && !matches!(b, SubalgebraSpec::Blocks { .. }) {
        return Err(Error::InvalidArgument(
            "block enforcement needs a blocks subalgebra".into(),
        ));
    }
    Ok(())
}

/// Blocks `E_B(K(a, b))` for all words of length `<= order`.
pub fn kernel_section(
    k: &KernelEstimate,
    order: usize,
    b: &SubalgebraSpec,
    enforce: Enforcement,
) -> Result<KernelSection> {
    if order > k.max_len {
        return Err(Error::OrderExceeded {
            requested: order,
            available: k.max_len,
        });
    }
    b.validate(k.n)?;
    check_enforcement(enforce, b)?;
    let count = word_count(k.d, order).expect("bounded by the estimate");
    let words = k.words[..count].to_vec();
    let mut blocks = Vec::with_capacity(count * (count + 1) / 2);
    let mut se = Vec::with_capacity(blocks.capacity());
    for j in 0..count {
        for i in 0..=j {
            let (blk, s) = enforced_block(k, i, j, b, enforce)?;
            blocks.push(blk);
            se.push(s);
        }
    }
    Ok(KernelSection {
        n: k.n,
        words,
        blocks,
        se,
    })
}

/// Shifted kernel `(K_B)_Σ(a, b) = sum_i E_B(K(a i, b i))` for all words of
/// length `<= order`; needs `order <= max_len - 1`.
pub fn shifted_section(
    k: &KernelEstimate,
    order: usize,
    b: &SubalgebraSpec,
    enforce: Enforcement,
) -> Result<KernelSection> {
    if k.max_len == 0 || order > k.max_len - 1 {
        return Err(Error::OrderExceeded {
            requested: order + 1,
            available: k.max_len,
        });
    }
    b.validate(k.n)?;
    check_enforcement(enforce, b)?;
    let count = word_count(k.d, order).expect("bounded by the estimate");
    let words = k.words[..count].to_vec();
    let mut blocks = Vec::with_capacity(count * (count + 1) / 2);
    let mut se = Vec::with_capacity(blocks.capacity());
    for j in 0..count {
        for i in 0..=j {
            let mut sum = ComplexMatrix::zeros(k.n, k.n);
            let mut var = 0.0;
            for letter in 1..=k.d as u32 {
                let si = words[i].append(letter).index(k.d);
                let sj = words[j].append(letter).index(k.d);
                let (blk, s) = enforced_block(k, si, sj, b, enforce)?;
                sum.axpy(Complex64::new(1.0, 0.0), &blk);
                var += s * s;
            }
            blocks.push(sum);
            se.push(var.sqrt());
        }
    }
    Ok(KernelSection {
        n: k.n,
        words,
        blocks,
        se,
    })
}

/// The shifted kernel at the largest available order, without enforcement.
pub fn shifted_kernel(k: &KernelEstimate, b: &SubalgebraSpec) -> Result<KernelSection> {
    if k.max_len == 0 {
        return Err(Error::OrderExceeded {
            requested: 1,
            available: 0,
        });
    }
    shifted_section(k, k.max_len - 1, b, Enforcement::None)
}

/// Assembled truncated Gram matrix.
#[derive(Clone, Debug)]
pub struct Gram {
    pub matrix: ComplexMatrix,
    pub words: Vec<Word>,
    pub n: usize,
    /// Smallest eigenvalue before clipping.
    pub min_eig: f64,
    pub clipped: bool,
    pub enforce: Enforcement,
    /// Enforcement was applied to an ensemble whose law is phase invariant.
    pub enforcement_valid: bool,
    /// Frobenius error bound propagated from the block standard errors.
    pub se: f64,
}

/// Relative eigenvalue level treated as rounding noise.
const ROUNDOFF: f64 = 1e-13;

/// Turns a section into a PSD Gram matrix, clipping eigenvalues in
/// `[-psd_clip_tol * scale, 0)` where `scale = max(lambda_max, 1)`.
pub fn section_to_gram(
    section: &KernelSection,
    enforce: Enforcement,
    phase_invariant: bool,
    psd_clip_tol: f64,
) -> Result<Gram> {
    let matrix = section.to_matrix();
    let eig = hermitian_eig(&matrix)?;
    let scale = eig.max().max(1.0);
    let min_eig = eig.min();
    if min_eig < -psd_clip_tol * scale {
        return Err(Error::NotPsd {
            min_eig,
            tol: psd_clip_tol * scale,
        });
    }
    let (matrix, clipped) = if min_eig < -ROUNDOFF * scale {
        (eig.apply(|x| x.max(0.0)), true)
    } else {
        (matrix, false)
    };
    Ok(Gram {
        matrix,
        words: section.words.clone(),
        n: section.n,
        min_eig,
        clipped,
        enforce,
        enforcement_valid: enforce == Enforcement::None || phase_invariant,
        se: section.total_se(),
    })
}

/// Gram matrix `[E_B(K(a, b))]` over words of length `<= order`, with
/// optional structure enforcement.
pub fn assemble_gram(
    k: &KernelEstimate,
    order: usize,
    b: &SubalgebraSpec,
    enforce: Enforcement,
    psd_clip_tol: f64,
) -> Result<Gram> {
    let section = kernel_section(k, order, b, enforce)?;
    section_to_gram(&section, enforce, k.phase_invariant, psd_clip_tol)
}

/// Gram matrix of the shifted kernel at `order`.
pub fn assemble_shifted_gram(
    k: &KernelEstimate,
    order: usize,
    b: &SubalgebraSpec,
    enforce: Enforcement,
    psd_clip_tol: f64,
) -> Result<Gram> {
    let section = shifted_section(k, order, b, enforce)?;
    section_to_gram(&section, enforce, k.phase_invariant, psd_clip_tol)
}
