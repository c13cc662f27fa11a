use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("block index {index} out of range 1..={len}")]
    BlockOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown land-use category {0}")]
    UnknownLandUse(u32),

    #[error("covariance of dimension {dim} is not positive definite (max jitter {max_jitter:e})")]
    Singular { dim: usize, max_jitter: f64 },

    #[error("no complete blocks available")]
    NoCompleteBlocks,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical model itself (as opposed to bad data).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
