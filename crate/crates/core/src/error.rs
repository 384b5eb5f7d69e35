use std::path::PathBuf;

/// Errors produced by the unclip library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),

    #[error("zero-length audio")]
    EmptySignal,

    #[error("all-zero reference signal")]
    ZeroReference,

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("STFT configuration is not overlap-add invertible: {0}")]
    NonCola(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
