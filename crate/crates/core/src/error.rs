use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unsupported wav format in {path}: {msg}")]
    UnsupportedFormat { path: PathBuf, msg: String },

    #[error("sample rate mismatch in {path}: expected {expected} Hz, found {found} Hz")]
    RateMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("numeric overflow in layer {layer}")]
    NumericOverflow { layer: String },

    #[error("training diverged at epoch {epoch}: {msg}")]
    TrainingFailure { epoch: usize, msg: String },

    #[error("insufficient trials: {0}")]
    InsufficientTrials(String),

    #[error("trial generation failed for {} mixture(s): {}", .offenders.len(), .offenders.join(", "))]
    TrialGeneration { offenders: Vec<String> },

    #[error("invalid model file: {0}")]
    ModelFile(String),

    #[error("invalid manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
