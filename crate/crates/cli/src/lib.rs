//! Pipeline stages behind the `spkx` command line: corpus synthesis, mixture
//! simulation, extractor training and inference, back-end training, scoring
//! and reporting.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod systems;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
