use thiserror::Error;

/// Errors raised by dataset handling, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch at line {line}: expected {expected} features, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid label {label} at line {line}: labels must be -1 or +1")]
    InvalidLabel { line: usize, label: String },

    #[error("non-finite value at line {line}")]
    NonFinite { line: usize },

    #[error("task `{task_id}` has no auxiliary scores (required by variant {variant})")]
    MissingScores { task_id: String, variant: String },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("AUC is undefined when only one class is present")]
    SingleClass,

    #[error("operation requires a linear kernel")]
    NonLinearKernel,

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(message: impl Into<String>) -> Error {
    Error::Invalid(message.into())
}
