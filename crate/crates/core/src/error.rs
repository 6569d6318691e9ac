use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("degenerate representation: self-HSIC is not positive, CKA is undefined")]
    DegenerateRepresentation,

    #[error("batch too small for {context}: need at least {required}, got {actual}")]
    BatchTooSmall {
        context: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("index out of range in {context}: {index} >= {bound}")]
    OutOfRange {
        context: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("no gradient path: {0}")]
    DeadGradient(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
