//! Optional JSON pipeline config. Every field may be omitted; command-line
//! flags override whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use intent_core::datagen::LlmClientConfig;
use intent_core::dataset::LabelVocabulary;
use intent_core::embedding::ProviderConfig;
use intent_core::loss::OfcConfig;
use intent_core::mining::MiningConfig;
use intent_core::trainer::TrainConfig;
use intent_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub taxonomy: Option<PathBuf>,
    pub provider: Option<ProviderConfig>,
    pub llm: Option<LlmClientConfig>,
    pub train: Option<TrainConfig>,
    /// Overrides `train.mining` when present.
    pub mining: Option<MiningConfig>,
    /// Overrides `train.ofc` when present.
    pub ofc: Option<OfcConfig>,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Taxonomy from the flag, else the config file, else the built-in maritime set.
    pub fn vocabulary(&self, flag: Option<&Path>) -> Result<LabelVocabulary> {
        match flag.or(self.taxonomy.as_deref()) {
            Some(p) => LabelVocabulary::load(p),
            None => Ok(LabelVocabulary::maritime()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = self.train.clone().unwrap_or_default();
        if let Some(m) = self.mining {
            c.mining = m;
        }
        if let Some(o) = self.ofc {
            c.ofc = o;
        }
        c
    }
}

/// `flag`, else `fallback`, else a validation error naming the flag.
pub fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::InvalidConfig(format!("--{name} is required")))
}
