use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate multipliers accepted for a whole run.
pub const LR_SCALES: [f64; 3] = [1.0, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Clipped to the training-set size.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub base_lr: f64,
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Examples per gradient work item. Items are reduced in a fixed order,
    /// so results do not depend on the thread count.
    pub grad_chunk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2000,
            max_epochs: 60,
            patience: 5,
            base_lr: 1e-3,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(5.0),
            grad_chunk: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate before per-group scaling.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.lr_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.grad_chunk == 0 {
            return bad("batch_size and grad_chunk must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !LR_SCALES.contains(&self.lr_scale) {
            return bad(format!("lr_scale {} not in {LR_SCALES:?}", self.lr_scale));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam needs 0 <= beta < 1 and eps > 0".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("clip_norm {c} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serialize")
    }
}
