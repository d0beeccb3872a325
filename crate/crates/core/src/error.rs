use thiserror::Error;

/// Errors raised by the cascade toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("law is totally critical (W = b with probability 1/b, else 0)")]
    TotallyCritical,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("io error: {0}")]
    Io(String),
}

impl CascadeError {
    pub(crate) fn parse(position: usize, message: impl Into<String>) -> Self {
        CascadeError::Parse {
            position,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CascadeError {
    fn from(e: std::io::Error) -> Self {
        CascadeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CascadeError>;
