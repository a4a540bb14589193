use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sampling and distillation settings of the contrastive objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    /// neighbours added to the same-position positive in the semantic term
    pub n_pos_s: usize,
    /// most similar neighbours used as negatives in the anatomy term
    pub n_neg_a: usize,
    pub tau: f64,
    /// half-width of the square neighbour window, in feature pixels
    pub window_radius: usize,
    pub anchors_per_image: usize,
    pub ema_momentum: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            n_pos_s: 4,
            n_neg_a: 8,
            tau: 0.07,
            window_radius: 2,
            anchors_per_image: 256,
            ema_momentum: 0.99,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let window = (2 * self.window_radius + 1).pow(2) - 1;
        for (name, n) in [("n_pos_s", self.n_pos_s), ("n_neg_a", self.n_neg_a)] {
            if n == 0 || n > window {
                return Err(Error::Config(format!(
                    "{name} = {n} must lie in 1..={window} for window radius {}",
                    self.window_radius
                )));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.anchors_per_image == 0 {
            return Err(Error::Config("anchors_per_image must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "ema_momentum {} outside [0, 1]",
                self.ema_momentum
            )));
        }
        Ok(())
    }
}

/// Weights of the refinement objective. The contrastive weight is split
/// between the semantic and anatomy terms by `w_semantic_vs_anatomy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_perc: f64,
    pub w_adv: f64,
    pub w_contrast: f64,
    pub w_semantic_vs_anatomy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_l1: 1.0,
            w_perc: 0.1,
            w_adv: 0.01,
            w_contrast: 0.1,
            w_semantic_vs_anatomy: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w_l1", self.w_l1),
            ("w_perc", self.w_perc),
            ("w_adv", self.w_adv),
            ("w_contrast", self.w_contrast),
            ("w_semantic_vs_anatomy", self.w_semantic_vs_anatomy),
        ];
        for (name, w) in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        if self.w_semantic_vs_anatomy > 1.0 {
            return Err(Error::Config(format!(
                "w_semantic_vs_anatomy must be at most 1, got {}",
                self.w_semantic_vs_anatomy
            )));
        }
        Ok(())
    }
}
