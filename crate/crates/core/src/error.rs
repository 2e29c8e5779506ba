use thiserror::Error;

/// Errors raised by the simulation and analysis modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpotError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("reference line missing: {0}")]
    ReferenceMissing(String),

    #[error("degenerate beam pair: {0}")]
    DegeneratePair(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl SpotError {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpotError::Config(_) => 2,
            SpotError::Numerical(_) | SpotError::RankDeficient(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for SpotError {
    fn from(e: std::io::Error) -> Self {
        SpotError::Io(e.to_string())
    }
}

impl From<csv::Error> for SpotError {
    fn from(e: csv::Error) -> Self {
        SpotError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SpotError {
    fn from(e: serde_json::Error) -> Self {
        SpotError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SpotError>;
