//! Self-adversarial negative sampling, the margin loss and its gradients,
//! Adam, checkpoints and the two-stage training loop.
//!
//! Pretraining optimizes `d((h,r),t) + d(h,(r,t))`; fine-tuning optimizes the
//! four-term graph-context distance starting from a pretrained model.

mod adam;
mod checkpoint;
mod loss;
mod negatives;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, inspect_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, CheckpointHeader,
};
pub use loss::{batch_loss, batch_loss_and_grad, fix_weights, log_sigmoid, mode_loss, Instance, LossSettings};
pub use negatives::{adversarial_weights, sample_negatives};
pub use trainer::{train, LogEntry, TrainOutcome, TrainState};

use crate::ote::OteError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Pretrain => 0,
            Stage::Finetune => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Stage::Pretrain),
            1 => Some(Stage::Finetune),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

/// Which side of a positive is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Head,
    Tail,
}

impl Mode {
    pub fn key(self) -> u64 {
        match self {
            Mode::Head => 0,
            Mode::Tail => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Margin γ.
    pub margin: f64,
    /// Adversarial temperature α; zero gives uniform negative weights.
    pub temperature: f64,
    pub negatives: usize,
    pub batch_size: usize,
    /// Absolute step at which training ends.
    pub max_steps: u64,
    pub valid_interval: u64,
    /// Non-improving validations tolerated before stopping.
    pub patience: u32,
    pub log_interval: u64,
    /// Raw-matrix determinants are checked this often.
    pub det_check_interval: u64,
    pub stage: Stage,
    /// Context pairs sampled per side during fine-tuning; `None` uses all.
    pub neighbor_cap: Option<usize>,
    /// Keep neighbor embeddings out of the context gradient.
    pub freeze_neighbors: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            margin: 9.0,
            temperature: 1.0,
            negatives: 256,
            batch_size: 1024,
            max_steps: 240_000,
            valid_interval: 10_000,
            patience: 5,
            log_interval: 100,
            det_check_interval: 1_000,
            stage: Stage::Pretrain,
            neighbor_cap: Some(64),
            freeze_neighbors: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.margin.is_nan() || self.margin <= 0.0 {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.negatives == 0 {
            return bad("at least one negative per positive is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.max_steps == 0 {
            return bad("max steps must be positive".into());
        }
        if self.neighbor_cap == Some(0) {
            return bad("neighbor cap must be positive when set".into());
        }
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            margin: self.margin,
            temperature: self.temperature,
            stage: self.stage,
            neighbor_cap: self.neighbor_cap,
            freeze_neighbors: self.freeze_neighbors,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] OteError),
    #[error("non-finite loss {loss} at step {step}; non-finite blocks after update: {blocks:?}")]
    NonFinite {
        step: u64,
        loss: f64,
        blocks: Vec<&'static str>,
    },
    #[error("training needs more than one entity")]
    TooFewEntities,
    #[error("{0}")]
    Stage(String),
}
