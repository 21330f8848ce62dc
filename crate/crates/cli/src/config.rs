use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use grid_core::dataset::DatasetConfig;
use grid_core::encoder::{digest_of, EncoderConfig};
use grid_core::eval::{HttpClientConfig, PromptConfig};
use grid_core::network::ModelConfig;
use grid_core::training::{LossConfig, TrainConfig};

/// Marks errors caused by the configuration or the command line; they map to
/// exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Everything a command needs, read from one TOML file. Every section is
/// optional and falls back to the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the dataset and training seeds when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Number of tasks `generate` produces.
    pub tasks: Option<usize>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub prompt: PromptConfig,
    pub llm: HttpClientConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))
    }

    /// Copies the top-level seed into every section that has one.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.dataset.seed = s;
            self.train.seed = s;
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>, default: &str) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from(default))
    }

    /// Model, encoder, training and loss sections must agree with each other.
    pub fn check_training(&self) -> Result<()> {
        self.model.validate().map_err(|e| config_err(e.to_string()))?;
        self.encoder.validate().map_err(|e| config_err(e.to_string()))?;
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        self.loss.validate().map_err(|e| config_err(e.to_string()))?;
        if self.encoder.dim != self.model.d {
            bail!(config_err(format!(
                "encoder.dim ({}) must equal model.d ({})",
                self.encoder.dim, self.model.d
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

pub fn ensure_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!(config_err(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
        .map_err(|e| config_err(format!("{e:#}")))
}
