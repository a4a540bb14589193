use crate::autodiff::{Graph, Tensor, Var};
use crate::networks::{build_unet, encoder_graph, NetworkParams, UNetConfig};
use crate::{Real, Result};

/// Mean squared difference.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let d = g.square(d)?;
    g.mean(d)
}

/// Mean absolute difference; the subgradient at a tie is zero.
pub fn l1_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let d = g.abs(d)?;
    g.mean(d)
}

fn mean_sq_offset<T: Real>(g: &mut Graph<T>, x: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(x, T::lit(-target))?;
    let d = g.square(d)?;
    g.mean(d)
}

/// Least-squares critic loss `½ mean((real - 1)²) + ½ mean(fake²)`.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let r = mean_sq_offset(g, real, 1.0)?;
    let f = mean_sq_offset(g, fake, 0.0)?;
    let s = g.add(r, f)?;
    g.scale(s, T::lit(0.5))
}

/// Least-squares generator loss `mean((fake - 1)²)`.
pub fn generator_loss<T: Real>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    mean_sq_offset(g, fake, 1.0)
}

/// Both least-squares adversarial losses on the same patch maps.
pub fn adversarial_losses<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<(Var, Var)> {
    Ok((discriminator_loss(g, real, fake)?, generator_loss(g, fake)?))
}

/// Seed of the default frozen perceptual extractor.
pub const PERCEPTUAL_SEED: u64 = 0x005e_ed0f_fea7;

/// Frozen multi-level convolutional feature extractor: the encoder of a 2D
/// feature U-Net with fixed weights.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T: Real> {
    cfg: UNetConfig,
    params: NetworkParams<T>,
}

impl<T: Real> PerceptualExtractor<T> {
    /// Randomly initialised extractor with the desk feature architecture.
    pub fn desk() -> Result<Self> {
        Self::random(UNetConfig::feature(4, 8, 32), PERCEPTUAL_SEED)
    }

    pub fn random(cfg: UNetConfig, seed: u64) -> Result<Self> {
        let params = build_unet(&cfg, seed)?;
        Self::from_params(cfg, params)
    }

    /// Uses externally supplied weights, e.g. loaded from a checkpoint.
    pub fn from_params(cfg: UNetConfig, params: NetworkParams<T>) -> Result<Self> {
        cfg.validate()?;
        params.check_same_layout(&build_unet::<T>(&cfg, 0)?)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Encoder features of a `[1, H, W]` image, one map per level.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let taps = encoder_graph(&mut g, &b, &self.cfg, xv, self.cfg.levels)?;
        Ok(taps.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Sum over levels of the mean squared feature difference. Gradients
    /// reach `pred` only.
    pub fn loss_graph(&self, g: &mut Graph<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if g.value(pred).shape() != target.shape() {
            return Err(crate::error::shape_err!(
                "perceptual loss: prediction {:?} vs target {:?}",
                g.value(pred).shape(),
                target.shape()
            ));
        }
        let reference = self.features(target)?;
        let b = self.params.bind(g, false);
        let taps = encoder_graph(g, &b, &self.cfg, pred, self.cfg.levels)?;
        let mut total: Option<Var> = None;
        for (p, r) in taps.into_iter().zip(reference) {
            let r = g.constant(r);
            let term = mse_loss(g, p, r)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one level"))
    }

    /// Value of [`Self::loss_graph`] without keeping a graph.
    pub fn loss(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        let mut g = Graph::new();
        let p = g.constant(pred.clone());
        let l = self.loss_graph(&mut g, p, target)?;
        Ok(g.value(l).item())
    }
}
