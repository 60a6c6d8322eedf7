use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate feature vector: zero norm")]
    DegenerateFeature,

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("no valid trials to score")]
    EmptyReport,

    #[error("response log integrity: {0}")]
    LogIntegrity(String),

    #[error("insufficient rank: {rank} significant components, {requested} requested")]
    InsufficientRank { rank: usize, requested: usize },

    #[error("insufficient images: need {need}, found {found}")]
    InsufficientImages { need: usize, found: usize },

    #[error("geometry does not fit the canvas: {0}")]
    Geometry(String),

    #[error("{path}: {inner}")]
    File { path: PathBuf, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    /// Attach the path that was being read or written.
    pub(crate) fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            inner: Box::new(self),
        }
    }
}
