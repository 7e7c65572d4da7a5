//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the sampling, surrogate, estimation
/// and campaign layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("Sobol dimension {dim} exceeds the direction-number table (max {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("statistic requested on an empty sample")]
    EmptySample,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("kernel matrix not positive definite after jitter escalation (size {size})")]
    NotPositiveDefinite { size: usize },

    #[error("model fit failed: {0}")]
    FitFailure(String),

    #[error("invalid warp cutoff: {0}")]
    InvalidCutoff(String),

    #[error("value out of transform domain: {0}")]
    OutOfDomain(String),

    #[error("covariance matrix is not positive semi-definite")]
    CovarianceNotPsd,

    #[error("objective evaluation failed: {0}")]
    ObjectiveFailure(String),

    #[error("too many failed evaluations: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(
        "outlier threshold {threshold} would remove {would_remove} of {total} points (> 10%)"
    )]
    OutlierOverflow {
        threshold: f64,
        would_remove: usize,
        total: usize,
    },

    #[error("domain too small on axis {axis} ({label}): span {span} < required {required}")]
    DomainTooSmall {
        axis: usize,
        label: String,
        span: f64,
        required: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("campaign stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("campaign directory is locked by another run: {0}")]
    Locked(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
