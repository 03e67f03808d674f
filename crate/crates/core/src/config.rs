//! Flat run configuration shared by every command.
//!
//! Files are TOML with one key per line and no tables, so runs diff cleanly.
//! Keys missing from a file take the defaults below; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Precision;
use crate::ote::{ModelConfig, OteError, Variant};
use crate::train::{Stage, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset '{0}' (expected fb15k-237 or wn18rr)")]
    Preset(String),
    #[error(transparent)]
    Model(#[from] OteError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with `train.txt`, `valid.txt`, `test.txt`.
    pub data_dir: Option<PathBuf>,
    /// Where checkpoints, logs and reports are written.
    pub out_dir: PathBuf,
    /// Input checkpoint: the pretrained model for `finetune`, the model for `eval`/`verify`.
    pub checkpoint: Option<PathBuf>,

    pub dim: usize,
    pub sub_dim: usize,
    pub variant: Variant,

    pub learning_rate: f64,
    pub max_steps: u64,
    pub finetune_learning_rate: f64,
    pub finetune_max_steps: u64,
    pub margin: f64,
    pub temperature: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub valid_interval: u64,
    pub patience: u32,
    pub log_interval: u64,
    pub det_check_interval: u64,
    /// Context pairs sampled per side while fine-tuning; 0 uses every pair.
    pub neighbor_cap: usize,
    pub freeze_neighbors: bool,

    pub seed: u64,
    pub precision: Precision,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    /// Leave wall-clock times out of written logs so reruns are byte-identical.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            dim: 400,
            sub_dim: 20,
            variant: Variant::Ote,
            learning_rate: 2e-3,
            max_steps: 240_000,
            finetune_learning_rate: 2e-4,
            finetune_max_steps: 60_000,
            margin: 9.0,
            temperature: 1.0,
            negatives: 256,
            batch_size: 1024,
            valid_interval: 10_000,
            patience: 5,
            log_interval: 100,
            det_check_interval: 1_000,
            neighbor_cap: 64,
            freeze_neighbors: false,
            seed: 0,
            precision: Precision::F32,
            threads: 0,
            deterministic: false,
        }
    }
}

impl RunConfig {
    /// Reference regimes for the two standard benchmarks.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "fb15k-237" => Ok(Self::default()),
            "wn18rr" => Ok(Self {
                sub_dim: 4,
                learning_rate: 1e-4,
                finetune_learning_rate: 3e-5,
                margin: 6.0,
                ..Self::default()
            }),
            other => Err(ConfigError::Preset(other.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        Ok(ModelConfig::new(self.dim, self.sub_dim, self.variant)?)
    }

    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig, ConfigError> {
        let (learning_rate, max_steps) = match stage {
            Stage::Pretrain => (self.learning_rate, self.max_steps),
            Stage::Finetune => (self.finetune_learning_rate, self.finetune_max_steps),
        };
        let cfg = TrainConfig {
            learning_rate,
            margin: self.margin,
            temperature: self.temperature,
            negatives: self.negatives,
            batch_size: self.batch_size,
            max_steps,
            valid_interval: self.valid_interval,
            patience: self.patience,
            log_interval: self.log_interval,
            det_check_interval: self.det_check_interval,
            stage,
            neighbor_cap: (self.neighbor_cap > 0).then_some(self.neighbor_cap),
            freeze_neighbors: self.freeze_neighbors,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
