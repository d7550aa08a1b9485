use thiserror::Error;

#[derive(Debug, Error)]
pub enum BtdError {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at offset {0}")]
    NonFinite(usize),

    /// Malformed tensor or matrix file. `offset` is the byte offset where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("linear system is not positive definite ({0}); use a strictly positive lambda")]
    NotPositiveDefinite(String),

    #[error("solver failed at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<BtdError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BtdError>;

pub(crate) fn usage(msg: impl Into<String>) -> BtdError {
    BtdError::Usage(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> BtdError {
    BtdError::Shape(msg.into())
}
