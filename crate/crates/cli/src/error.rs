use std::fmt;

use spkx_core::Error as CoreError;

/// Command failure classified by exit code: 2 for bad usage or input, 1 for
/// internal failures.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io { .. }
            | CoreError::Format { .. }
            | CoreError::UnsupportedFormat { .. }
            | CoreError::RateMismatch { .. }
            | CoreError::TooShort { .. }
            | CoreError::CorpusTooSmall(_)
            | CoreError::InsufficientTrials(_)
            | CoreError::TrialGeneration { .. }
            | CoreError::ModelFile(_)
            | CoreError::Manifest { .. }
            | CoreError::Config(_) => CliError::Input(msg),
            CoreError::Dimension(_)
            | CoreError::DegenerateSignal(_)
            | CoreError::NumericOverflow { .. }
            | CoreError::TrainingFailure { .. } => CliError::Internal(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
