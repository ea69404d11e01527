use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("unsupported wav codec: {0}")]
    UnsupportedCodec(String),

    #[error("audio has zero length")]
    EmptyAudio,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("clip too short: need at least {needed} samples, got {got}")]
    ClipTooShort { needed: usize, got: usize },

    #[error("hop {hop} does not satisfy constant overlap-add for a {window_length}-sample hann window")]
    ColaViolation { window_length: usize, hop: usize },

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    RateMismatch { expected: u32, got: u32 },

    #[error("{0} is silent (rms below 1e-6)")]
    Silent(&'static str),

    #[error("unknown overlay id `{0}`")]
    UnknownOverlay(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("train split is empty")]
    EmptyTrainSplit,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("series is empty")]
    EmptySeries,

    #[error("coefficient of variation undefined: |mean| = {0:e} < 1e-9")]
    UndefinedCv(f64),

    #[error("model topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("fine-mixing requires a clean model")]
    MissingCleanModel,

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
