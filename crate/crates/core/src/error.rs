use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate selection: {0}")]
    DegenerateSelection(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
