use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("raw context violates censor bounds at coordinates {coords:?}")]
    CensorPrecondition { coords: Vec<usize> },

    #[error("perturbed-diversity bound is only defined for isotropic perturbations")]
    UnsupportedCovariance,

    #[error("fixed context pool exhausted at round {round} with replay disabled")]
    PoolExhausted { round: usize },

    #[error("matrix is not symmetric (max |M_ij - M_ji| = {deviation:.3e})")]
    NotSymmetric { deviation: f64 },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{0} episode(s) failed during the experiment")]
    EpisodeFailures(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
