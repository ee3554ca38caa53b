use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input exhausted: step {step} needs input index {needed}, sequence has {len}")]
    InputExhausted { step: usize, needed: usize, len: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("stale cache: forward cache does not belong to these parameters")]
    StaleCache,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infinite-mean workload: Pareto shape {0} must exceed 1")]
    InfiniteMeanWorkload(f64),

    #[error("sequence not in training set: {0}")]
    UnknownSequence(u64),

    #[error("enumeration bound exceeded: {count} combinations > {limit}")]
    EnumerationBound { count: u64, limit: u64 },

    #[error("support mismatch: old policy gives zero probability to a reachable action")]
    SupportMismatch,

    #[error("trace too short: needed {needed:.3}s of bandwidth, trace covers {available:.3}s")]
    TraceTooShort { needed: f64, available: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
