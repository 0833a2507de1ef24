use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no incumbent: dataset is empty")]
    NoIncumbent,

    #[error("empty dataset: the GP needs at least one observation")]
    EmptyDataset,

    #[error("undefined Tanimoto at zero: both fingerprints are all-zero")]
    UndefinedTanimoto,

    #[error("fingerprint length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("gram not PD: factorization failed with jitter up to {max_jitter:e}")]
    GramNotPd { max_jitter: f64 },

    #[error("insufficient candidates: need {needed}, have {available} after deduplication")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("decoder protocol failure: {message} (payload: {payload})")]
    DecoderProtocol { message: String, payload: String },

    #[error("dimension mismatch: {what} is {actual} but the run is configured for {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },

    #[error("infeasible oracle: likelihood <= 1e-12 on every one of {probes} prior probes")]
    InfeasibleOracle { probes: usize },

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("objective failure: {0}")]
    Objective(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn protocol(message: impl Into<String>, payload: impl Into<String>) -> Self {
        Error::DecoderProtocol { message: message.into(), payload: payload.into() }
    }
}
