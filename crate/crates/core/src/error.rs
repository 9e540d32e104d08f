use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum EmberError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value at stage {stage}")]
    NonFinite { stage: String },
    #[error("invalid label {value}; labels are 0 (fake) or 1 (real)")]
    InvalidLabel { value: f64 },
    #[error("unknown parameter path {path}")]
    UnknownParam { path: String },
    #[error("duplicate parameter path {path}")]
    DuplicateParam { path: String },
    #[error("non-finite gradient for parameter {path}")]
    NonFiniteGradient { path: String },
    #[error("duplicate record id {id}")]
    DuplicateId { id: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("file not found: {path}")]
    MissingFile { path: String },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmberError>;

impl EmberError {
    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        EmberError::Dimension {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
