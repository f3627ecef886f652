//! JSON run configuration for `train`. Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use gtm_core::model::{ModelConfig, ProviderSpec};
use gtm_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory; falls back to `GTM_DATA_ROOT`.
    pub data: Option<PathBuf>,
    /// Most recent products held out from training.
    pub test_size: usize,
    /// Parameter initialization seed; defaults to `train.seed`.
    pub model_seed: Option<u64>,
    /// Shrink `year_min..=year_max` to the training data's release years.
    pub fit_years: bool,
    pub image_provider: ProviderSpec,
    pub text_provider: ProviderSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            test_size: 0,
            model_seed: None,
            fit_years: true,
            image_provider: ProviderSpec::Product,
            text_provider: ProviderSpec::Hash { seed: 0 },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        // serde names the offending key, e.g. "unknown field `epoch`"
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(path.display()))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
