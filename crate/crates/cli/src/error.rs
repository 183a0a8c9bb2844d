use std::fmt;

use thiserror::Error;

/// A formula problem at a 1-based character column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("formula error at {0}")]
    Parse(#[from] ParseError),

    #[error("input error: {0}")]
    Ingest(String),

    #[error("model fit failed: {0}")]
    Fit(quasiboot::Error),

    #[error("{0}")]
    BootstrapAbort(quasiboot::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit status for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Ingest(_) => 3,
            CliError::Fit(_) => 4,
            CliError::BootstrapAbort(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    /// Classifies a library error raised while fitting or bootstrapping.
    pub fn from_core(e: quasiboot::Error) -> Self {
        match e {
            quasiboot::Error::TooManyFailures { .. } => CliError::BootstrapAbort(e),
            quasiboot::Error::InvalidConfig(msg) => CliError::Other(format!("invalid configuration: {msg}")),
            quasiboot::Error::InvalidData(msg) => CliError::Ingest(msg),
            other => CliError::Fit(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
