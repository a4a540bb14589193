use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var, LEAKY_SLOPE, NORM_EPS};
use crate::error::{shape_err, Error, Result};
use crate::Real;

use super::params::{Bound, Init, NetworkParams};
use super::unet::conv_layer;

/// 2D patch discriminator: `blocks` stride-2 4×4 convolutions (instance norm
/// on all but the first) followed by a 1×1 scoring convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub base_channels: usize,
    pub blocks: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            blocks: 4,
        }
    }
}

impl DiscConfig {
    fn width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Smallest input extent that leaves the last normalized block at
    /// least 2×2.
    pub fn min_extent(&self) -> usize {
        1 << (self.blocks + 1)
    }
}

pub fn build_discriminator<T: Real>(cfg: &DiscConfig, seed: u64) -> Result<NetworkParams<T>> {
    if cfg.blocks == 0 || cfg.base_channels == 0 {
        return Err(Error::Config(
            "discriminator needs blocks and channels > 0".into(),
        ));
    }
    let mut p = NetworkParams::new();
    let mut init = Init::new(seed);
    for i in 0..cfg.blocks {
        let ci = if i == 0 { 1 } else { cfg.width(i - 1) };
        let co = cfg.width(i);
        p.insert(
            format!("b{i}.conv.kernel"),
            init.kaiming(&[co, ci, 4, 4], ci * 16),
        )?;
        p.insert(format!("b{i}.conv.bias"), Tensor::zeros(&[co]))?;
        if i > 0 {
            p.insert(format!("b{i}.norm.gain"), Tensor::full(&[co], T::one()))?;
            p.insert(format!("b{i}.norm.shift"), Tensor::zeros(&[co]))?;
        }
    }
    let last = cfg.width(cfg.blocks - 1);
    p.insert("score.kernel", init.kaiming(&[1, last, 1, 1], last))?;
    p.insert("score.bias", Tensor::zeros(&[1]))?;
    Ok(p)
}

/// Patch map of realness scores for a `[1, H, W]` image.
pub fn disc_graph<T: Real>(g: &mut Graph<T>, b: &Bound, cfg: &DiscConfig, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let m = cfg.min_extent();
    if shape.len() != 3 || shape[0] != 1 || shape[1] < m || shape[2] < m {
        return Err(shape_err!(
            "discriminator expects [1, H, W] with H, W >= {m}, got {shape:?}"
        ));
    }
    let mut h = x;
    for i in 0..cfg.blocks {
        h = g.conv(
            h,
            b.var(&format!("b{i}.conv.kernel"))?,
            Some(b.var(&format!("b{i}.conv.bias"))?),
            &[2, 2],
            &[1, 1],
            2,
        )?;
        if i > 0 {
            h = g.instance_norm(
                h,
                b.var(&format!("b{i}.norm.gain"))?,
                b.var(&format!("b{i}.norm.shift"))?,
                T::lit(NORM_EPS),
            )?;
        }
        h = g.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
    }
    conv_layer(g, b, "score", h, 1, 2)
}

pub fn disc_forward<T: Real>(
    params: &NetworkParams<T>,
    cfg: &DiscConfig,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = disc_graph(&mut g, &b, cfg, xv)?;
    Ok(g.value(y).clone())
}
