use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::networks::{Grads, NetworkParams};
use crate::{Error, Real, Result};

/// AdamW hyperparameters other than the learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let [b1, b2] = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!(
                "betas {:?} must lie in [0, 1)",
                self.betas
            )));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub first: NetworkParams<T>,
    pub second: NetworkParams<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &NetworkParams<T>) -> Self {
        let zeros = || {
            let mut z = NetworkParams::new();
            for (k, t) in params.iter() {
                z.insert(k.clone(), Tensor::zeros(t.shape()))
                    .expect("names are unique");
            }
            z
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update. Weight decay is decoupled: `θ -= lr * wd * θ` happens
/// before, and independently of, the bias-corrected adaptive step.
pub fn adamw_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &Grads<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    params.check_same_layout(&state.first)?;
    if grads.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let [b1, b2] = cfg.betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = T::lit(1.0 - lr * cfg.weight_decay);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (g1, g2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (inv_c1, inv_c2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
    let (lr_t, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (((name, p), (_, m)), (_, v)) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::ParamMismatch(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let it = p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data());
        for (((w, m), v), &g) in it {
            *w = *w * decay;
            *m = b1t * *m + g1 * g;
            *v = b2t * *v + g2 * g * g;
            let mhat = *m * inv_c1;
            let vhat = *v * inv_c2;
            *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine decay from `lr_init` at epoch 0 to `lr_min` at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_init: f64, lr_min: f64) -> Result<f64> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside 0..={total_epochs}"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr_init - lr_min) * (1.0 + phase.cos()))
}
