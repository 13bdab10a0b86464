//! The JSON run configuration shared by the CLI commands.
//!
//! Every field defaults, so `{}` is a complete configuration; unknown keys
//! are rejected at any depth.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::moe::MoeConfig;
use crate::trainer::TrainConfig;
use crate::wavefeat::WaveletConfig;
use crate::{Error, Result};

/// Overrides `train.seed` and `train.eval_seed` when set.
pub const SEED_ENV: &str = "STAM_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: MoeConfig,
    pub wavelet: WaveletConfig,
    pub train: TrainConfig,
    /// Static K-NN fan-out built from `dist.csv`.
    pub e_per_node: usize,
    /// Dataset directory; the `--data-dir` flag takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: MoeConfig::default(),
            wavelet: WaveletConfig::default(),
            train: TrainConfig::default(),
            e_per_node: 8,
            data_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Invalid(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.wavelet.validate()?;
        if self.e_per_node == 0 {
            return Err(Error::Invalid("e_per_node must be positive".into()));
        }
        Ok(())
    }

    /// Applies a `STAM_SEED` value.
    pub fn override_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            self.train.seed = seed;
            self.train.eval_seed = seed;
        }
        Ok(())
    }

    pub fn override_seed_from_env(&mut self) -> Result<()> {
        self.override_seed(std::env::var(SEED_ENV).ok().as_deref())
    }

    /// Hex SHA-256 of the canonical JSON of everything but the data path.
    pub fn hash(&self) -> String {
        let canonical = Self {
            data_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hash_str(&json)
    }
}

pub fn hash_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
