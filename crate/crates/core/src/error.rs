use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("space mismatch in {context}: {detail}")]
    SpaceMismatch { context: &'static str, detail: String },

    #[error("cannot mix finite and gaussian values in {0}")]
    BackendMismatch(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("outcome {outcome} has zero mass under the pushforward; the update is undefined")]
    UnsupportedOutcome { outcome: String },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("unknown factor {factor} (space has {count} factors)")]
    UnknownFactor { factor: usize, count: usize },

    #[error("strategy space is empty: {0}")]
    EmptyStrategySpace(String),

    #[error("game shape mismatch: {0}")]
    GameShape(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
