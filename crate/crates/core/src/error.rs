use thiserror::Error;

pub type Result<T, E = CpboError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpboError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coordinate {index} = {value} lies outside [{low}, {high}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no latent value for config index {0}")]
    MissingLatent(usize),

    #[error("cholesky factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("non-finite loss at training iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    /// A run configuration that cannot be executed, such as a missing or
    /// conflicting budget.
    #[error("invalid run configuration: {0}")]
    InvalidRunConfig(String),

    #[error("run aborted at iteration {iteration}: {source}")]
    RunAborted {
        iteration: usize,
        #[source]
        source: Box<CpboError>,
        /// Serialized partial result up to the failing iteration.
        partial: Option<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
