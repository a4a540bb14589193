use serde::{Deserialize, Serialize};

use crate::geometry::DEFAULT_WINDOW;
use crate::losses::{ContrastiveConfig, LossWeights};
use crate::networks::{DiscConfig, UNetConfig};
use crate::{Error, Result};

use super::optim::AdamWConfig;

/// Volume geometry plus every network architecture of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[nx, ny, nz]`
    pub dims: [usize; 3],
    /// mm per voxel along x, y, z
    pub spacing: [f64; 3],
    /// HU window mapped onto `[0, 1]`
    pub window: [f64; 2],
    pub coarse: UNetConfig,
    pub refiner: UNetConfig,
    pub feature: UNetConfig,
    pub discriminator: DiscConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 32³ volumes at 2.8 mm, four-level nets of base width 8.
    pub fn desk() -> Self {
        Self {
            dims: [32; 3],
            spacing: [2.8; 3],
            window: [DEFAULT_WINDOW.0, DEFAULT_WINDOW.1],
            coarse: UNetConfig::desk(3),
            refiner: UNetConfig::refiner(4, 8),
            feature: UNetConfig::feature(4, 8, 32),
            discriminator: DiscConfig::default(),
        }
    }

    /// 128³ volumes at 2.5 mm, five-level nets of base width 64.
    pub fn full_scale() -> Self {
        Self {
            dims: [128; 3],
            spacing: [2.5; 3],
            window: [DEFAULT_WINDOW.0, DEFAULT_WINDOW.1],
            coarse: UNetConfig::full_scale(3),
            refiner: UNetConfig::refiner(5, 64),
            feature: UNetConfig::feature(5, 64, 32),
            discriminator: DiscConfig {
                base_channels: 64,
                blocks: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, cfg, dims) in [
            ("coarse", &self.coarse, 3),
            ("refiner", &self.refiner, 2),
            ("feature", &self.feature, 2),
        ] {
            cfg.validate()?;
            if cfg.dims != dims || cfg.in_channels != 1 {
                return bad(format!("{name} net must be {dims}D with one input channel"));
            }
        }
        if self.coarse.out_channels != 1 || self.refiner.out_channels != 1 {
            return bad("coarse and refiner nets must have one output channel".into());
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        if !(self.window[0] < self.window[1]) {
            return bad(format!("window {:?} must satisfy lo < hi", self.window));
        }
        let coarse_m = self.coarse.stride_multiple();
        let slice_m = self
            .refiner
            .stride_multiple()
            .max(self.feature.stride_multiple())
            .max(self.discriminator.min_extent());
        for (axis, &d) in self.dims.iter().enumerate() {
            if d == 0 || d % coarse_m != 0 {
                return bad(format!(
                    "volume extent {d} on axis {axis} is not a multiple of {coarse_m}"
                ));
            }
            if axis < 2 && d % slice_m != 0 {
                return bad(format!(
                    "in-plane extent {d} is not a multiple of {slice_m}"
                ));
            }
        }
        Ok(())
    }
}

/// Settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// 1 (coarse net) or 2 (refiner)
    pub stage: u8,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    /// volumes per step in stage 1, axial slices per step in stage 2
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub loss_weights: LossWeights,
    pub contrastive: ContrastiveConfig,
    /// checkpoint after every this many epochs (and always after the last)
    pub checkpoint_every: usize,
    /// keep the student fixed; the teacher then converges onto it
    #[serde(default)]
    pub freeze_student: bool,
}

impl TrainConfig {
    fn base(stage: u8, epochs: usize, lr_init: f64, batch_size: usize) -> Self {
        let adamw = AdamWConfig::default();
        Self {
            stage,
            epochs,
            lr_init,
            lr_min: 1e-6,
            batch_size,
            seed: 0,
            weight_decay: adamw.weight_decay,
            betas: adamw.betas,
            eps: adamw.eps,
            loss_weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
            checkpoint_every: 5,
            freeze_student: false,
        }
    }

    pub fn desk_stage1() -> Self {
        Self::base(1, 20, 2e-4, 1)
    }

    pub fn desk_stage2() -> Self {
        Self::base(2, 20, 1e-4, 4)
    }

    pub fn full_scale_stage1() -> Self {
        Self::base(1, 220, 2e-4, 1)
    }

    pub fn full_scale_stage2() -> Self {
        Self::base(2, 100, 1e-4, 4)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.stage == 1 || self.stage == 2) {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("epochs, batch_size and checkpoint_every must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return bad(format!(
                "learning rates must satisfy 0 <= lr_min <= lr_init, 0 < lr_init; got {} and {}",
                self.lr_min, self.lr_init
            ));
        }
        self.adamw().validate()?;
        self.loss_weights.validate()?;
        self.contrastive.validate()
    }
}
