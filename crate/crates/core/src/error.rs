use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample count {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("problem has no inner conditional sampler")]
    InnerSamplerUnavailable,

    #[error("analytic reference requested but the problem has no known truth")]
    MissingTruth,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
