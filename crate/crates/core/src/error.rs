use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrwError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("diffusion is not invertible at t = {t}")]
    SingularDiffusion { t: f64 },

    #[error("non-finite value {0} cannot be quantised")]
    NonFinite(f64),

    #[error("too few samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("data generation overflowed: {0}")]
    Overflow(String),
}

pub type Result<T, E = LrwError> = std::result::Result<T, E>;
