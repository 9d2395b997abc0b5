//! Pipeline configuration: one TOML document, flags override individual keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spkx_core::backend::BackendConfig;
use spkx_core::extractor::ExtractorConfig;
use spkx_core::frontend::FrontendConfig;
use spkx_core::mixsim::SplitCounts;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub test_speakers: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    #[serde(default = "default_snr_min")]
    pub snr_min_db: f64,
    #[serde(default = "default_snr_max")]
    pub snr_max_db: f64,
    pub seed: u64,
}

fn default_snr_min() -> f64 {
    spkx_core::mixsim::SNR_MIN_DB
}

fn default_snr_max() -> f64 {
    spkx_core::mixsim::SNR_MAX_DB
}

impl MixtureConfig {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            dev: self.dev,
            test: self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    #[serde(default = "default_ratio")]
    pub nontarget_ratio: usize,
    pub seed: u64,
}

fn default_ratio() -> usize {
    spkx_core::eval::DEFAULT_NONTARGET_RATIO
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub mixtures: MixtureConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    pub trials: TrialConfig,
}

/// Every stage that draws random numbers must name its seed explicitly.
const REQUIRED_SEEDS: [&str; 5] = ["corpus", "mixtures", "extractor", "backend", "trials"];

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Input(format!("config: {e}")))?;
        for section in REQUIRED_SEEDS {
            let has_seed = table
                .get(section)
                .and_then(|v| v.as_table())
                .is_some_and(|t| t.contains_key("seed"));
            if !has_seed {
                return Err(CliError::Input(format!(
                    "config: missing mandatory seed {section}.seed"
                )));
            }
        }
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.extractor.validate()?;
        self.backend.validate()?;
        if self.corpus.test_speakers + 2 > self.corpus.speakers {
            return Err(CliError::Input(format!(
                "config: {} test speakers leaves fewer than 2 training speakers out of {}",
                self.corpus.test_speakers, self.corpus.speakers
            )));
        }
        if self.frontend.cmn_window == 0 {
            return Err(CliError::Input(
                "config: frontend.cmn_window must be positive".into(),
            ));
        }
        Ok(())
    }
}
