use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Upper bound on training epochs.
pub const MAX_EPOCHS: usize = 100;

/// Global batch size of the full-scale runs, kept for reference.
pub const PAPER_BATCH: usize = 16_384;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy of `sigmoid(logit)` per week head.
    #[default]
    Bce,
    /// `(y - sigmoid(logit))²` per week head.
    SquaredError,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bce" => Some(LossKind::Bce),
            "squared_error" | "mse" => Some(LossKind::SquaredError),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::SquaredError => "squared_error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    /// Global batch size, split across workers.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub workers: usize,
    /// Weight of positive terms in the cross-entropy; unweighted when unset.
    pub pos_weight: Option<f64>,
    /// Epochs between progress callbacks; 0 reports only the last epoch.
    pub report_every: usize,
    /// Stop once the week-1 validation AUC reaches this value.
    pub stop_at_auc: Option<f64>,
    /// Batch-norm layers normalize with their running statistics instead of
    /// batch statistics, which makes the loss a per-sample sum.
    pub frozen_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            epochs: 50,
            batch: 256,
            lr: 1e-4,
            seed: 0,
            workers: 1,
            pos_weight: None,
            report_every: 1,
            stop_at_auc: None,
            frozen_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(config_err!("epochs must be in 1..={}, got {}", MAX_EPOCHS, self.epochs));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be a non-negative number, got {}", self.lr));
        }
        if self.workers == 0 {
            return Err(config_err!("at least one worker is required"));
        }
        if self.batch < self.workers {
            return Err(config_err!("batch size {} is smaller than the worker count {}", self.batch, self.workers));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(config_err!("positive weight must be positive, got {}", w));
            }
        }
        if let Some(a) = self.stop_at_auc {
            if !(0.0..=1.0).contains(&a) {
                return Err(config_err!("stopping AUC must be in [0, 1], got {}", a));
            }
        }
        Ok(())
    }
}
