//! Run configuration file: model hyperparameters plus data and output paths.

use std::fs;
use std::path::{Path, PathBuf};

use ibner::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

/// ```toml
/// train = "data/train.jsonl"
/// dev = "data/dev.jsonl"
/// dict = "data/synonyms.tsv"
/// out = "runs/all"
///
/// [model]
/// mode = "all"
/// beta = 1e-4
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Model selection corpus; the training corpus when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dict: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
