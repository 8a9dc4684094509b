use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-step anomaly score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// `softmax(−disparity)` over each window.
    Disparity,
    /// The disparity score times the classification-head probability.
    #[default]
    Fused,
}

/// Alarm threshold on anomaly scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Quantile of validation scores.
    Quantile(f64),
    /// The cut with the best F1 on labelled validation scores.
    BestF1,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Window length in residues.
    pub window: usize,
    /// Residue dimension.
    pub input_dim: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    pub layers: usize,
    /// Exponent on `|i − j|` in the proximity kernel.
    pub proximity_exp: f64,
    /// Initial kernel width.
    pub init_gamma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub learning_rate: f64,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Training windows per epoch, as a multiple of the non-overlapping count.
    pub windows_per_epoch: f64,
    /// Share of training steps whose label is visible.
    pub label_fraction: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub threshold: ThresholdPolicy,
    pub score_rule: ScoreRule,
    /// Start each layer with key weights equal to its query weights.
    pub tied_key_init: bool,
    /// Reconstruct from the last layer's attention output instead of its
    /// final hidden state.
    pub recon_from_attention: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 100,
            input_dim: 6,
            d_model: 32,
            ff_dim: 64,
            layers: 3,
            proximity_exp: 1.0,
            init_gamma: 0.5,
            lambda_min: 1.0,
            lambda_max: 1.0,
            alpha1: 20.0,
            alpha2: 20.0,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            epochs: 20,
            batch_size: 4,
            windows_per_epoch: 1.0,
            label_fraction: 0.1,
            grad_clip: 5.0,
            threshold: ThresholdPolicy::BestF1,
            score_rule: ScoreRule::Fused,
            tied_key_init: true,
            recon_from_attention: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("model config: {m}")));
        if self.window < 2 {
            return fail("window must be >= 2");
        }
        if self.input_dim == 0 || self.d_model < self.input_dim {
            return fail("d_model must be >= input_dim >= 1");
        }
        if self.layers == 0 || self.ff_dim == 0 {
            return fail("layers and ff_dim must be >= 1");
        }
        if !(self.proximity_exp > 0.0) {
            return fail("proximity exponent must be > 0");
        }
        if !(self.init_gamma > 0.0) {
            return fail("initial kernel width must be > 0");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.windows_per_epoch > 0.0) {
            return fail("learning rate, batch size and windows per epoch must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("learning-rate decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return fail("label fraction must lie in [0, 1]");
        }
        for v in [
            self.lambda_min,
            self.lambda_max,
            self.alpha1,
            self.alpha2,
            self.grad_clip,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail("loss weights and clip must be finite and >= 0");
            }
        }
        match self.threshold {
            ThresholdPolicy::Quantile(q) if !(0.0..=1.0).contains(&q) => {
                fail("threshold quantile outside [0, 1]")
            }
            ThresholdPolicy::Fixed(x) if !x.is_finite() => fail("fixed threshold must be finite"),
            _ => Ok(()),
        }
    }
}
