//! Flat TOML run configuration.
//!
//! ```toml
//! version = 1
//! task = "event_argument"
//! schema = "data/schema.json"
//! train = "data/train.jsonl"
//! dev = "data/dev.jsonl"
//! checkpoint = "out/model.ckpt"
//! case = 7
//! epochs = 30
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rse_core::encoder::{EncoderConfig, SplitConfig};
use rse_core::model::{ModelConfig, TrainConfig, VariantConfig};
use rse_core::rse::Task;
use serde::{Deserialize, Serialize};

use crate::UserError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    pub schema: PathBuf,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Ablation case 1..=8.
    pub case: u8,

    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub local_heads: usize,
    pub locality: f64,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub feature_dim: usize,
    pub mlp_dim: usize,
    pub crf_masking: bool,
    pub tied_branch: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub head_lr: f64,
    pub head_weight_decay: f64,
    pub encoder_lr: f64,
    pub encoder_weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub split_choices: Vec<usize>,
    pub split_warmup_epochs: usize,

    /// Split layer used when evaluating after training.
    pub split: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            version: 0,
            task: Task::EventArgument,
            schema: PathBuf::from("schema.json"),
            train: PathBuf::from("train.jsonl"),
            dev: None,
            checkpoint: PathBuf::from("model.ckpt"),
            case: 7,
            model_dim: enc.model_dim,
            layers: enc.layers,
            heads: enc.heads,
            local_heads: enc.local_heads,
            locality: enc.locality,
            feedforward_dim: enc.feedforward_dim,
            dropout: enc.dropout,
            max_len: enc.max_len,
            feature_dim: enc.feature_dim,
            mlp_dim: model.mlp_dim,
            crf_masking: model.crf_masking,
            tied_branch: model.tied_branch,
            epochs: train.epochs,
            batch_size: train.batch_size,
            head_lr: train.head_lr,
            head_weight_decay: train.head_weight_decay,
            encoder_lr: train.encoder_lr,
            encoder_weight_decay: train.encoder_weight_decay,
            warmup_epochs: train.warmup_epochs,
            seed: train.seed,
            split_choices: train.split_choices,
            split_warmup_epochs: train.split_warmup_epochs,
            split: 0,
        }
    }
}

impl RunConfig {
    /// Parses and validates `path`; relative paths inside are rebased on its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| UserError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.schema, &mut config.train, &mut config.checkpoint] {
            *p = base.join(&*p);
        }
        if let Some(dev) = config.dev.as_mut() {
            *dev = base.join(&*dev);
        }
        config.validate().map_err(|e| UserError(format!("config {}: {e:#}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("version must be {CONFIG_VERSION} (found {})", self.version);
        }
        self.variant()?.validate()?;
        self.model().encoder.validate()?;
        self.train_config().validate(self.layers)?;
        SplitConfig::new(self.split).validate(self.layers)?;
        Ok(())
    }

    pub fn variant(&self) -> anyhow::Result<VariantConfig> {
        VariantConfig::case(self.case).with_context(|| format!("case {}", self.case))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size: 1,
                model_dim: self.model_dim,
                layers: self.layers,
                heads: self.heads,
                local_heads: self.local_heads,
                locality: self.locality,
                feedforward_dim: self.feedforward_dim,
                dropout: self.dropout,
                max_len: self.max_len,
                feature_dim: self.feature_dim,
            },
            mlp_dim: self.mlp_dim,
            crf_masking: self.crf_masking,
            tied_branch: self.tied_branch,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            head_lr: self.head_lr,
            head_weight_decay: self.head_weight_decay,
            encoder_lr: self.encoder_lr,
            encoder_weight_decay: self.encoder_weight_decay,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            split_choices: self.split_choices.clone(),
            split_warmup_epochs: self.split_warmup_epochs,
        }
    }
}
