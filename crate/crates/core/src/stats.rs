//! Running sums for Monte Carlo means and their standard errors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::ComplexMatrix;

/// Mean and standard error of a real scalar population.
///
/// Welford updates with Chan's pairwise merge, so nearly constant samples
/// do not lose their spread to cancellation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarAccumulator {
    mean: f64,
    m2: f64,
    count: u64,
}

impl ScalarAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Standard error of the mean; zero for fewer than two samples.
    pub fn standard_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
    }

    pub fn summary(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            se: self.standard_error(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Entrywise mean of matrix samples with the Frobenius norm of the
/// entrywise standard errors as a single uncertainty figure.
#[derive(Clone, Debug)]
pub struct MatrixAccumulator {
    mean: ComplexMatrix,
    m2: Vec<f64>,
    count: u64,
}

impl MatrixAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            mean: ComplexMatrix::zeros(rows, cols),
            m2: vec![0.0; rows * cols],
            count: 0,
        }
    }

    pub fn push(&mut self, x: &ComplexMatrix) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((m, q), z) in self
            .mean
            .as_mut_slice()
            .iter_mut()
            .zip(self.m2.iter_mut())
            .zip(x.as_slice())
        {
            let delta = z - *m;
            *m += delta * inv;
            let after = z - *m;
            *q += delta.re * after.re + delta.im * after.im;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for ((m, q), (om, oq)) in self
            .mean
            .as_mut_slice()
            .iter_mut()
            .zip(self.m2.iter_mut())
            .zip(other.mean.as_slice().iter().zip(&other.m2))
        {
            let delta: Complex64 = om - *m;
            *m += delta * (nb / n);
            *q += oq + delta.norm_sqr() * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> ComplexMatrix {
        self.mean.clone()
    }

    pub fn frobenius_se(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let total: f64 = self.m2.iter().map(|q| q.max(0.0) / (n - 1.0)).sum();
        (total / n).sqrt()
    }
}
