use log::info;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{ModelConfig, Widths};

/// Training hyper-parameters. Read from JSON; absent keys take the
/// defaults below and are logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pairs per minibatch, positives and negatives together.
    pub batch_size: usize,
    /// Negatives sampled per positive.
    pub neg_ratio: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub latent_dim: usize,
    /// Latent samples per pair in the training objective.
    pub train_samples: usize,
    /// Monte Carlo samples per score at evaluation time.
    pub eval_samples: usize,
    pub use_user_prior: bool,
    pub use_item_prior: bool,
    /// Global gradient-norm cap.
    pub grad_clip: f64,
    /// Validation cases scored after every epoch.
    pub val_users: usize,
    /// Cap on minibatches per epoch; `None` sweeps every positive once.
    pub max_steps_per_epoch: Option<usize>,
    pub widths: Widths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            neg_ratio: 5,
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 10,
            seed: 0,
            latent_dim: 128,
            train_samples: 1,
            eval_samples: 128,
            use_user_prior: true,
            use_item_prior: true,
            grad_clip: 5.0,
            val_users: 500,
            max_steps_per_epoch: None,
            widths: Widths::default(),
        }
    }
}

impl TrainConfig {
    /// Parses JSON, logging every key that falls back to its default.
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| TrainError::Config("config must be a JSON object".into()))?;
        let defaults = serde_json::to_value(Self::default()).expect("serialisable");
        for (key, v) in defaults.as_object().expect("struct") {
            if !obj.contains_key(key) {
                info!("config key {key:?} missing; using default {v}");
            }
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size < 1 + self.neg_ratio {
            return bad("batch_size must hold at least one positive and its negatives");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.latent_dim == 0 || self.train_samples == 0 || self.eval_samples == 0 {
            return bad("latent_dim, train_samples and eval_samples must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }

    /// Positives per minibatch: `batch_size / (1 + neg_ratio)`.
    pub fn batch_positives(&self) -> usize {
        (self.batch_size / (1 + self.neg_ratio)).max(1)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            widths: self.widths,
            use_user_prior: self.use_user_prior,
            use_item_prior: self.use_item_prior,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = TrainConfig::default();
        assert_eq!((c.neg_ratio, c.latent_dim, c.batch_size, c.eval_samples), (5, 128, 128, 128));
        assert_eq!(c.batch_positives(), 21);
        assert_eq!(c.batch_positives() * (1 + c.neg_ratio), 126);
    }

    #[test]
    fn partial_json_falls_back() {
        let c = TrainConfig::from_json(r#"{"neg_ratio": 2, "seed": 9}"#).unwrap();
        assert_eq!(c.neg_ratio, 2);
        assert_eq!(c.seed, 9);
        assert_eq!(c.latent_dim, 128);
        assert_eq!(c.batch_positives(), 42);
        let w = TrainConfig::from_json(r#"{"widths": {"prior_hidden": 50}}"#).unwrap();
        assert_eq!(w.widths.prior_hidden, 50);
        assert_eq!(w.widths.inference_hidden, [600, 200]);
    }

    #[test]
    fn bad_json_is_rejected() {
        assert!(TrainConfig::from_json("[1]").is_err());
        assert!(TrainConfig::from_json(r#"{"nope": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"learning_rate": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"batch_size": 3, "neg_ratio": 5}"#).is_err());
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
