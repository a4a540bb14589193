use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var, LEAKY_SLOPE, NORM_EPS};
use crate::error::{shape_err, Error, Result};
use crate::Real;

use super::params::{Bound, Init, NetworkParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    TransposedConv,
    LinearInterp,
}

/// Architecture of a U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// spatial rank, 2 or 3
    pub dims: usize,
    pub levels: usize,
    pub base_channels: usize,
    /// feature width per level, starting with `base_channels`
    pub channel_schedule: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// trailing 1×1 convolution mapping to `out_channels`
    pub final_adapt_conv: bool,
    pub upsample_mode: UpsampleMode,
    /// width of the contrastive projection heads; 0 disables them
    #[serde(default)]
    pub projection_dim: usize,
    /// add the input to the output (refiner learns a correction)
    #[serde(default)]
    pub residual: bool,
}

fn doubling(base: usize, levels: usize) -> Vec<usize> {
    (0..levels).map(|l| base << l).collect()
}

impl UNetConfig {
    /// Five levels, widths 64…1024, transposed-conv upsampling.
    pub fn full_scale(dims: usize) -> Self {
        Self::plain(dims, 5, 64)
    }

    /// Four levels, widths 8…64.
    pub fn desk(dims: usize) -> Self {
        Self::plain(dims, 4, 8)
    }

    pub fn plain(dims: usize, levels: usize, base: usize) -> Self {
        Self {
            dims,
            levels,
            base_channels: base,
            channel_schedule: doubling(base, levels),
            in_channels: 1,
            out_channels: 1,
            final_adapt_conv: true,
            upsample_mode: UpsampleMode::TransposedConv,
            projection_dim: 0,
            residual: false,
        }
    }

    /// 2D refiner: predicts a correction added to its input slice.
    pub fn refiner(levels: usize, base: usize) -> Self {
        Self {
            residual: true,
            ..Self::plain(2, levels, base)
        }
    }

    /// 2D feature network: linear upsampling, no output adaptation, with
    /// projection heads on the bottleneck and the last decoder level.
    pub fn feature(levels: usize, base: usize, projection_dim: usize) -> Self {
        Self {
            final_adapt_conv: false,
            upsample_mode: UpsampleMode::LinearInterp,
            projection_dim,
            ..Self::plain(2, levels, base)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dims == 2 || self.dims == 3) {
            return bad(format!("dims must be 2 or 3, got {}", self.dims));
        }
        if self.levels < 2 {
            return bad(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.channel_schedule.len() != self.levels {
            return bad(format!(
                "channel schedule has {} entries for {} levels",
                self.channel_schedule.len(),
                self.levels
            ));
        }
        if self.channel_schedule[0] != self.base_channels || self.base_channels == 0 {
            return bad("channel schedule must start at base_channels (> 0)".into());
        }
        if self.channel_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("channel schedule must be strictly increasing".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in/out channels must be positive".into());
        }
        if self.residual && !(self.final_adapt_conv && self.in_channels == self.out_channels) {
            return bad("a residual U-Net needs final_adapt_conv and in == out channels".into());
        }
        Ok(())
    }

    /// Required divisor of every spatial extent.
    pub fn stride_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn kernel(&self, co: usize, ci: usize, k: usize) -> Vec<usize> {
        let mut s = vec![co, ci];
        s.extend(std::iter::repeat_n(k, self.dims));
        s
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.dims + 1 || shape[0] != self.in_channels {
            return Err(shape_err!(
                "U-Net expects [{}, {} spatial axes], got {shape:?}",
                self.in_channels,
                self.dims
            ));
        }
        let m = self.stride_multiple();
        if let Some(e) = shape[1..].iter().find(|&&e| e % m != 0) {
            return Err(shape_err!(
                "spatial extent {e} is not divisible by 2^(levels-1) = {m}"
            ));
        }
        Ok(())
    }
}

fn add_conv<T: Real>(
    p: &mut NetworkParams<T>,
    init: &mut Init,
    name: &str,
    shape: Vec<usize>,
) -> Result<()> {
    let fan_in: usize = shape[1..].iter().product();
    p.insert(format!("{name}.kernel"), init.kaiming(&shape, fan_in))?;
    p.insert(format!("{name}.bias"), Tensor::zeros(&shape[..1]))?;
    Ok(())
}

fn add_norm<T: Real>(p: &mut NetworkParams<T>, name: &str, ch: usize) -> Result<()> {
    p.insert(format!("{name}.gain"), Tensor::full(&[ch], T::one()))?;
    p.insert(format!("{name}.shift"), Tensor::zeros(&[ch]))?;
    Ok(())
}

fn add_block<T: Real>(
    p: &mut NetworkParams<T>,
    init: &mut Init,
    cfg: &UNetConfig,
    prefix: &str,
    idx: usize,
    ci: usize,
    co: usize,
) -> Result<()> {
    add_conv(
        p,
        init,
        &format!("{prefix}.conv{idx}"),
        cfg.kernel(co, ci, 3),
    )?;
    add_norm(p, &format!("{prefix}.norm{idx}"), co)
}

/// Deterministic parameters for `cfg`.
///
/// Naming: `enc.L{l}.conv{0,1}.{kernel,bias}`, `enc.L{l}.norm{0,1}.{gain,shift}`,
/// `dec.L{l}.up.*` (transposed conv only), `dec.L{l}.conv*`/`norm*`, `head.*`
/// for the output adaptation, `proj_s.*` / `proj_a.*` for projection heads.
pub fn build_unet<T: Real>(cfg: &UNetConfig, seed: u64) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    let w = &cfg.channel_schedule;
    let mut p = NetworkParams::new();
    let mut init = Init::new(seed);
    for l in 0..cfg.levels {
        let ci = if l == 0 { cfg.in_channels } else { w[l - 1] };
        let pre = format!("enc.L{l}");
        add_block(&mut p, &mut init, cfg, &pre, 0, ci, w[l])?;
        add_block(&mut p, &mut init, cfg, &pre, 1, w[l], w[l])?;
    }
    for l in (0..cfg.levels - 1).rev() {
        let pre = format!("dec.L{l}");
        let up_ch = match cfg.upsample_mode {
            UpsampleMode::TransposedConv => {
                let shape = cfg.kernel(w[l + 1], w[l], 2);
                let fan_in = w[l + 1] * (1 << cfg.dims);
                p.insert(format!("{pre}.up.kernel"), init.kaiming(&shape, fan_in))?;
                p.insert(format!("{pre}.up.bias"), Tensor::zeros(&[w[l]]))?;
                w[l]
            }
            UpsampleMode::LinearInterp => w[l + 1],
        };
        add_block(&mut p, &mut init, cfg, &pre, 0, w[l] + up_ch, w[l])?;
        add_block(&mut p, &mut init, cfg, &pre, 1, w[l], w[l])?;
    }
    if cfg.final_adapt_conv {
        add_conv(
            &mut p,
            &mut init,
            "head",
            cfg.kernel(cfg.out_channels, w[0], 1),
        )?;
        if cfg.residual {
            // start as the identity map
            let k = p.get_mut("head.kernel")?;
            k.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
    if cfg.projection_dim > 0 {
        let d = cfg.projection_dim;
        for (name, ci) in [("proj_s", w[cfg.levels - 1]), ("proj_a", w[0])] {
            add_conv(
                &mut p,
                &mut init,
                &format!("{name}.0"),
                cfg.kernel(d, ci, 1),
            )?;
            add_conv(&mut p, &mut init, &format!("{name}.1"), cfg.kernel(d, d, 1))?;
        }
    }
    Ok(p)
}

/// Intermediate handles of one U-Net pass.
#[derive(Clone, Copy, Debug)]
pub struct UNetTaps {
    /// final output (after adaptation / residual), or the last decoder map
    pub output: Var,
    pub bottleneck: Var,
    pub decoder: Var,
}

pub(crate) fn conv_layer<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: Var,
    k: usize,
    dims: usize,
) -> Result<Var> {
    let pad = vec![k / 2; dims];
    g.conv(
        x,
        b.var(&format!("{name}.kernel"))?,
        Some(b.var(&format!("{name}.bias"))?),
        &vec![1; dims],
        &pad,
        dims,
    )
}

fn block<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    idx: usize,
    x: Var,
    dims: usize,
) -> Result<Var> {
    let h = conv_layer(g, b, &format!("{prefix}.conv{idx}"), x, 3, dims)?;
    let h = g.instance_norm(
        h,
        b.var(&format!("{prefix}.norm{idx}.gain"))?,
        b.var(&format!("{prefix}.norm{idx}.shift"))?,
        T::lit(NORM_EPS),
    )?;
    g.leaky_relu(h, T::lit(LEAKY_SLOPE))
}

/// Encoder pass through the first `depth` levels. Returns each level's
/// features before pooling; the last entry is the deepest map computed.
pub fn encoder_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &UNetConfig,
    x: Var,
    depth: usize,
) -> Result<Vec<Var>> {
    cfg.check_input(g.value(x).shape())?;
    if depth == 0 || depth > cfg.levels {
        return Err(Error::Config(format!(
            "encoder depth {depth} outside 1..={}",
            cfg.levels
        )));
    }
    let dims = cfg.dims;
    let pool = vec![2; dims];
    let mut taps = Vec::with_capacity(depth);
    let mut h = x;
    for l in 0..depth {
        if l > 0 {
            h = g.max_pool(h, &pool, dims)?;
        }
        let pre = format!("enc.L{l}");
        h = block(g, b, &pre, 0, h, dims)?;
        h = block(g, b, &pre, 1, h, dims)?;
        taps.push(h);
    }
    Ok(taps)
}

/// Encoder-decoder pass on an already bound parameter set.
pub fn unet_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &UNetConfig,
    x: Var,
) -> Result<UNetTaps> {
    let dims = cfg.dims;
    let pool = vec![2; dims];
    let mut skips = encoder_graph(g, b, cfg, x, cfg.levels)?;
    let bottleneck = skips.pop().expect("levels >= 2");
    let mut h = bottleneck;
    for l in (0..cfg.levels - 1).rev() {
        let pre = format!("dec.L{l}");
        let up = match cfg.upsample_mode {
            UpsampleMode::TransposedConv => g.transposed_conv(
                h,
                b.var(&format!("{pre}.up.kernel"))?,
                Some(b.var(&format!("{pre}.up.bias"))?),
                &pool,
                dims,
            )?,
            UpsampleMode::LinearInterp => g.linear_upsample(h, 2, dims)?,
        };
        h = g.concat(skips[l], up)?;
        h = block(g, b, &pre, 0, h, dims)?;
        h = block(g, b, &pre, 1, h, dims)?;
    }
    let decoder = h;
    let mut output = decoder;
    if cfg.final_adapt_conv {
        output = conv_layer(g, b, "head", output, 1, dims)?;
        if cfg.residual {
            output = g.add(output, x)?;
        }
    }
    Ok(UNetTaps {
        output,
        bottleneck,
        decoder,
    })
}

/// Stand-alone forward pass: `x` is `[in_channels, *spatial]`.
pub fn unet_forward<T: Real>(
    params: &NetworkParams<T>,
    cfg: &UNetConfig,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let taps = unet_graph(&mut g, &b, cfg, xv)?;
    Ok(g.value(taps.output).clone())
}

/// Contrastive feature maps; every spatial vector has unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle<T> {
    /// projected bottleneck features, `[D, h / 2^(levels-1), w / 2^(levels-1)]`
    pub semantic: T,
    /// projected last-decoder features, `[D, h, w]`
    pub anatomy: T,
}

/// Pre-normalization norms below this are treated as degenerate.
pub const FEATURE_EPS: f64 = 1e-12;

fn projection_head<T: Real>(g: &mut Graph<T>, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = conv_layer(g, b, &format!("{name}.0"), x, 1, 2)?;
    let h = g.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
    conv_layer(g, b, &format!("{name}.1"), h, 1, 2)
}

fn check_feature_cfg(cfg: &UNetConfig) -> Result<()> {
    if cfg.dims != 2
        || cfg.upsample_mode != UpsampleMode::LinearInterp
        || cfg.final_adapt_conv
        || cfg.projection_dim == 0
    {
        return Err(Error::Config(
            "feature network needs dims = 2, linear_interp upsampling, no final adaptation conv \
             and projection heads"
                .into(),
        ));
    }
    Ok(())
}

/// Feature pass before normalization (used to check for degenerate vectors)
/// and after.
pub fn feature_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &UNetConfig,
    x: Var,
) -> Result<(FeatureBundle<Var>, FeatureBundle<Var>)> {
    check_feature_cfg(cfg)?;
    let taps = unet_graph(g, b, cfg, x)?;
    let s = projection_head(g, b, "proj_s", taps.bottleneck)?;
    let a = projection_head(g, b, "proj_a", taps.decoder)?;
    let eps = T::lit(FEATURE_EPS);
    let normed = FeatureBundle {
        semantic: g.l2_normalize_channels(s, eps)?,
        anatomy: g.l2_normalize_channels(a, eps)?,
    };
    Ok((
        FeatureBundle {
            semantic: s,
            anatomy: a,
        },
        normed,
    ))
}

pub fn feature_forward<T: Real>(
    params: &NetworkParams<T>,
    cfg: &UNetConfig,
    x: &Tensor<T>,
) -> Result<FeatureBundle<Tensor<T>>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (_, f) = feature_graph(&mut g, &b, cfg, xv)?;
    Ok(FeatureBundle {
        semantic: g.value(f.semantic).clone(),
        anatomy: g.value(f.anatomy).clone(),
    })
}
