use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("expected {expected} leader controls, got {got}")]
    ControlDimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("failure rate over zero replicates is undefined")]
    NoReplicates,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
