use thiserror::Error;

/// Failures raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index ({i}, {j}, {k}) out of range for dimension {d}")]
    IndexOutOfRange { i: usize, j: usize, k: usize, d: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("eigendecomposition did not converge within {max_iter} iterations")]
    EigenNoConvergence { max_iter: usize },
    #[error("initialization exhausted the candidate pool after {picked} of {needed} factors")]
    InitExhausted { picked: usize, needed: usize },
    #[error("non-finite value at gradient iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("lifted Gram matrix is numerically singular (condition number {condition:e})")]
    SingularGram { condition: f64 },
    #[error("negative variance {value:e}")]
    NegativeVariance { value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
