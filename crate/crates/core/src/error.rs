use thiserror::Error;

/// Errors raised by the GP, sparse-grid and aggregation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (largest jitter tried: {jitter:e})")]
    NonPositiveDefinite { jitter: f64 },

    #[error("unsupported hyperparameter: {0}")]
    UnsupportedParam(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("sparse grid would contain {points} points (limit {limit})")]
    OverflowGuard { points: u128, limit: u128 },

    #[error("cannot split {points} points across {experts} experts")]
    TooManyExperts { experts: usize, points: usize },

    #[error("{rule} needs at least {required} experts, got {experts}")]
    TooFewExperts {
        rule: &'static str,
        required: usize,
        experts: usize,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{clamped} of {total} predictive variances were negative and clamped")]
    ExcessiveClamping { clamped: usize, total: usize },

    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
