use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::timeseries::{CalendarFeature, STEPS_PER_DAY};

pub const MOMENTUM: f64 = 0.9;
pub const CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_window: usize,
    pub horizon: usize,
    /// Strictly increasing levels in (0, 1).
    pub quantiles: Vec<f64>,
    pub hidden_size: usize,
    pub attention_heads: usize,
    pub dropout: f64,
    /// Calendar covariates fed alongside the target on past positions.
    pub past_covariates: Vec<CalendarFeature>,
    /// Calendar covariates known for the forecast horizon; at least one.
    pub future_covariates: Vec<CalendarFeature>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_window: 7 * STEPS_PER_DAY,
            horizon: STEPS_PER_DAY,
            quantiles: vec![0.1, 0.5, 0.9],
            hidden_size: 32,
            attention_heads: 4,
            dropout: 0.1,
            past_covariates: CalendarFeature::DEFAULT_SET.to_vec(),
            future_covariates: CalendarFeature::DEFAULT_SET.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let fail = |msg: String| Err(ForecastError::Config(msg));
        if self.horizon == 0 || self.input_window < self.horizon {
            return fail(format!("need input_window ({}) >= horizon ({}) >= 1", self.input_window, self.horizon));
        }
        if self.quantiles.is_empty() {
            return fail("at least one quantile level is required".into());
        }
        if self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return fail("quantile levels must lie in (0, 1)".into());
        }
        if self.quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return fail("quantile levels must be strictly increasing".into());
        }
        if self.hidden_size == 0 || self.attention_heads == 0 {
            return fail("hidden_size and attention_heads must be positive".into());
        }
        if self.hidden_size % self.attention_heads != 0 {
            return fail(format!(
                "hidden_size {} is not divisible by attention_heads {}",
                self.hidden_size, self.attention_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.future_covariates.is_empty() {
            return fail("at least one future covariate is required".into());
        }
        for (name, set) in [("past", &self.past_covariates), ("future", &self.future_covariates)] {
            for (i, f) in set.iter().enumerate() {
                if set[..i].contains(f) {
                    return fail(format!("{name} covariate {f:?} listed twice"));
                }
            }
        }
        Ok(())
    }

    /// Variables on past positions: the target plus the past covariates.
    pub fn past_variables(&self) -> usize {
        1 + self.past_covariates.len()
    }

    pub fn future_variables(&self) -> usize {
        self.future_covariates.len()
    }

    /// Index of the level closest to the median; its head is unconstrained
    /// and the other levels are offsets from it.
    pub fn center_quantile(&self) -> usize {
        let mut best = 0;
        for (i, q) in self.quantiles.iter().enumerate() {
            if (q - 0.5).abs() < (self.quantiles[best] - 0.5).abs() {
                best = i;
            }
        }
        best
    }
}

/// Gradient descent with momentum, linear learning-rate decay to zero over
/// `epochs`, and early stopping on the validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stopping_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { initial_lr: 0.05, epochs: 20, batch_size: 16, early_stopping_patience: 5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return Err(ForecastError::Config(format!("initial_lr {} must be finite and >= 0", self.initial_lr)));
        }
        if self.batch_size == 0 || self.early_stopping_patience == 0 {
            return Err(ForecastError::Config("batch_size and early_stopping_patience must be positive".into()));
        }
        if self.epochs > 0 && self.early_stopping_patience > self.epochs {
            return Err(ForecastError::Config(format!(
                "early_stopping_patience {} exceeds epochs {}",
                self.early_stopping_patience, self.epochs
            )));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return 0.0;
        }
        self.initial_lr * (1.0 - epoch as f64 / self.epochs as f64)
    }

    /// Reduced budget for adapting pretrained weights: a tenth of the
    /// learning rate, a fifth of the epochs, patience 3.
    pub fn finetune_from(pretrain: &TrainConfig) -> TrainConfig {
        let epochs = (pretrain.epochs / 5).max(1);
        TrainConfig {
            initial_lr: pretrain.initial_lr / 10.0,
            epochs,
            batch_size: pretrain.batch_size,
            early_stopping_patience: 3.min(epochs),
            seed: pretrain.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().center_quantile(), 1);
    }

    #[test]
    fn heads_must_divide_hidden() {
        let c = ModelConfig { hidden_size: 30, attention_heads: 4, ..ModelConfig::default() };
        assert!(matches!(c.validate(), Err(ForecastError::Config(_))));
    }

    #[test]
    fn bad_quantiles_rejected() {
        for q in [vec![], vec![0.5, 0.5], vec![0.9, 0.1], vec![0.0, 0.5], vec![0.5, 1.0]] {
            let c = ModelConfig { quantiles: q, ..ModelConfig::default() };
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn linear_decay_reaches_zero_after_last_epoch() {
        let t = TrainConfig { initial_lr: 0.1, epochs: 4, ..TrainConfig::default() };
        for (e, want) in [0.1, 0.075, 0.05, 0.025].into_iter().enumerate() {
            assert!((t.lr_at(e) - want).abs() < 1e-15);
        }
        assert_eq!(t.lr_at(4), 0.0);
    }

    #[test]
    fn finetune_budget_is_reduced() {
        let pre = TrainConfig { initial_lr: 0.05, epochs: 20, ..TrainConfig::default() };
        let ft = TrainConfig::finetune_from(&pre);
        assert!((ft.initial_lr - 0.005).abs() < 1e-15);
        assert_eq!(ft.epochs, 4);
        assert_eq!(ft.early_stopping_patience, 3);
        ft.validate().unwrap();
    }

    #[test]
    fn patience_cannot_exceed_epochs() {
        let t = TrainConfig { epochs: 2, early_stopping_patience: 3, ..TrainConfig::default() };
        assert!(t.validate().is_err());
        let t = TrainConfig { epochs: 0, early_stopping_patience: 3, ..TrainConfig::default() };
        t.validate().unwrap();
    }
}
