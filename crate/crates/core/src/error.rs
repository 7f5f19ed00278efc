use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in input: {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("all sample weights are zero")]
    DegenerateWeights,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scatter matrix is not positive semidefinite")]
    NotPsd,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sdp solver did not converge (iteration {iteration}): {detail}")]
    SdpNonConvergence { iteration: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("estimator failure: {0}")]
    EstimatorFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
