use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validation-mAP gain below which an epoch does not count as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// Optimization hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub plateau_epochs: usize,
    pub early_stop_epochs: usize,
    pub batch_size: usize,
    pub dropout_keep: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay_factor: 0.1,
            plateau_epochs: 5,
            early_stop_epochs: 15,
            batch_size: 64,
            dropout_keep: 0.6,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must be in (0, 1), got {}", self.decay_factor));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep must be in (0, 1], got {}", self.dropout_keep));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.plateau_epochs == 0 || self.early_stop_epochs == 0 {
            return bad("plateau_epochs and early_stop_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Learning-rate state derived from a validation history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub stop: bool,
    /// Completed plateaus, i.e. the exponent applied to `decay_factor`.
    pub decays: u32,
    /// Index of the best epoch so far.
    pub best_epoch: Option<usize>,
}

/// Step decay and early stopping from per-epoch validation mAP.
///
/// A plateau completes after `plateau_epochs` consecutive epochs without an
/// improvement larger than [`IMPROVEMENT_THRESHOLD`]; its counter then
/// restarts. Training stops once the window of the last `early_stop_epochs`
/// epochs, counting the best one, holds no further improvement.
pub fn lr_schedule(history: &[f64], cfg: &TrainConfig) -> Schedule {
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut since_improvement = 0usize;
    let mut since_decay = 0usize;
    let mut decays = 0u32;
    for (epoch, &score) in history.iter().enumerate() {
        if best_epoch.is_none() || score > best + IMPROVEMENT_THRESHOLD {
            best = score;
            best_epoch = Some(epoch);
            since_improvement = 0;
            since_decay = 0;
        } else {
            since_improvement += 1;
            since_decay += 1;
            if since_decay >= cfg.plateau_epochs {
                decays += 1;
                since_decay = 0;
            }
        }
    }
    let stop = best_epoch.is_some() && since_improvement + 1 >= cfg.early_stop_epochs;
    Schedule {
        lr: cfg.lr0 * cfg.decay_factor.powi(decays as i32),
        stop,
        decays,
        best_epoch,
    }
}
