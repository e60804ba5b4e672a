use thiserror::Error;

use crate::discriminate::PoissonMixture;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A filtering or selection step left nothing to work with.
    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The mixture fit did not converge. The last iterate is kept for inspection.
    #[error("mixture fit failed after {iterations} iterations: {message}")]
    FitFailure {
        message: String,
        iterations: usize,
        last: Option<Box<PoissonMixture>>,
    },

    #[error("threshold {threshold} V is never crossed (peak {peak} V)")]
    NoCrossing { threshold: f64, peak: f64 },

    /// Count rate at or above the repetition rate: the calibration diverges.
    #[error("detector saturated: count rate {count_rate} >= repetition rate {repetition_rate}")]
    Saturation {
        count_rate: f64,
        repetition_rate: f64,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
