use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:e} below -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("word count {count} exceeds the cap of {cap}")]
    WordCap { count: usize, cap: usize },

    #[error("exact arithmetic overflow: {0}")]
    Overflow(String),

    #[error("non-finite product at sample {index}")]
    NonFiniteSample { index: u64 },

    #[error("requested order {requested} exceeds available order {available}")]
    OrderExceeded { requested: usize, available: usize },

    #[error("matrix is not a member of the subalgebra (defect {defect:e})")]
    NotInSubalgebra { defect: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
