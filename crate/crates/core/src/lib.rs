//! Moment kernels of random matrix ensembles and the positivity tests
//! built on them.
//!
//! For a random matrix `A` (or a tuple `A_1, ..., A_d`) the moment kernel
//! `K(a, b) = E[A^a (A^b)^*]` is a positive definite kernel on words. This
//! crate estimates it by Monte Carlo, compresses it with conditional
//! expectations onto diagonal, block-diagonal or scalar subalgebras, and
//! decides whether the shifted kernel is dominated by the kernel itself:
//!
//! - [`rn`] computes Radon-Nikodym densities between truncated Gram
//!   matrices and the kernel-order test;
//! - [`moments`] reduces bi-unitarily invariant models to scalar moment
//!   sequences and runs the ratio test against Catalan, Fuss-Catalan and
//!   Marchenko-Pastur reference values;
//! - [`vn`] brackets creation-operator norms on truncated Fock space and
//!   checks the localized von Neumann bounds.
//!
//! All Monte Carlo loops draw samples from counter-based streams and reduce
//! in a fixed order, so results are bitwise reproducible for any rayon pool
//! size.

pub mod ensembles;
pub mod error;
pub mod kernel;
pub mod moments;
pub mod numerics;
pub mod parallel;
pub mod rn;
pub mod stats;
pub mod synthetic;
pub mod vn;

pub use ensembles::{EnsembleSpec, SampleIdentity};
pub use error::{Error, Result};
pub use kernel::{Enforcement, KernelEstimate, SubalgebraSpec, Word};
pub use moments::{MomentKind, MomentSequence, RatioVerdict};
pub use rn::{DensityReport, DensityVerdict, KolmogorovFactor, Tolerances};
pub use vn::{CreationNormBound, NcPolynomial, VnVerdict};

pub use numerics::{ComplexMatrix, HermitianEig};

pub use num_complex::Complex64;
