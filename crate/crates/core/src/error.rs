use thiserror::Error;

pub type Result<T> = std::result::Result<T, FracnetError>;

#[derive(Debug, Error)]
pub enum FracnetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error(
        "quadrature did not converge: estimated error {achieved:e} above tolerance {tolerance:e}"
    )]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("cannot allocate {requested} bytes for path storage (limit {available} bytes)")]
    Resource { requested: u64, available: u64 },

    #[error("step rule produced non-increasing time at index {index}: {previous} -> {proposed}")]
    NonIncreasingRule {
        index: usize,
        previous: f64,
        proposed: f64,
    },

    #[error("net knot {time} is not a knot of the simulation grid")]
    MissingKnot { time: f64 },

    #[error("{count} non-finite samples in Monte Carlo estimate")]
    NonFinite { count: usize },

    #[error("too few usable points for a fit: {found} (need {required})")]
    TooFewPoints { found: usize, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FracnetError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FracnetError::InvalidInput(msg.into())
    }
}
