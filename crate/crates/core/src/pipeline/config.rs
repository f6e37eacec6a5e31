//! Run configuration: a TOML file with `[model]`, `[train]`, `[eval]` and
//! `[diagnostics]` tables. Every key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsConfig;
use crate::losses::{LossMode, MiningConfig};
use crate::metrics::AuproConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub scheduler_gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub mining: MiningConfig,
    pub seed: u64,
    /// Append per-epoch variance/entropy records to `diagnostics.jsonl`.
    pub log_diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 5e-5,
            scheduler_gamma: 0.995,
            batch_size: 16,
            epochs: 30,
            loss_mode: LossMode::Adc,
            mining: MiningConfig::default(),
            seed: 0,
            log_diagnostics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("adam_eps must be positive and weight_decay non-negative".into()));
        }
        if !(self.scheduler_gamma > 0.0 && self.scheduler_gamma <= 1.0) {
            return Err(Error::Config(format!("scheduler_gamma must lie in (0, 1], got {}", self.scheduler_gamma)));
        }
        self.mining.validate()
    }

    /// Learning rate in effect during epoch `epoch` (zero-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.scheduler_gamma.powi(epoch as i32)
    }
}

/// Named loss presets: `fr` for feature-rich roots, `fp` for feature-poor.
pub fn preset_loss(name: &str) -> Result<LossMode> {
    match name {
        "fr" => Ok(LossMode::Adc),
        "fp" => Ok(LossMode::Global),
        other => Err(Error::Config(format!("unknown preset `{other}` (expected fr or fp)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Gaussian sigma applied to maps before pixel metrics and image scores;
    /// 0 disables smoothing.
    pub smoothing_sigma: f64,
    pub aupro: AuproConfig,
    pub batch_size: usize,
    pub save_maps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            smoothing_sigma: crate::anomaly::DEFAULT_SMOOTHING_SIGMA,
            aupro: AuproConfig::default(),
            batch_size: 16,
            save_maps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.annotate(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.diagnostics.validate()?;
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}
