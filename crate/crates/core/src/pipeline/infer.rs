use crate::autodiff::Tensor;
use crate::geometry::{back_project, denormalize, normalize_volume, Projection, Volume};
use crate::networks::{unet_forward, NetworkParams};
use crate::parallel::map_range;
use crate::{Error, Result};

use super::checkpoint::Checkpoint;
use super::stage1::Stage1State;
use super::stage2::Stage2State;
use super::{axial_slice, ModelConfig};

fn check_projection(p: &Projection<f32>, model: &ModelConfig) -> Result<()> {
    let spacing_ok = p
        .volume_spacing
        .iter()
        .zip(&model.spacing)
        .all(|(a, b)| (a - b).abs() <= 1e-6 * b.abs());
    if p.volume_dims != model.dims || !spacing_ok {
        return Err(Error::Geometry(format!(
            "{} projection was taken of a {:?} volume at {:?} mm, the model expects {:?} at {:?} mm",
            p.axis.tag(),
            p.volume_dims,
            p.volume_spacing,
            model.dims,
            model.spacing
        )));
    }
    p.check_against(model.dims)
}

/// Two-view back-projection in HU: the baseline every reconstruction
/// starts from.
pub fn initial_estimate(
    ap: &Projection<f32>,
    lat: &Projection<f32>,
    model: &ModelConfig,
) -> Result<Volume<f32>> {
    check_projection(ap, model)?;
    check_projection(lat, model)?;
    back_project(ap, lat, model.dims, model.spacing)
}

/// The two inference networks: the coarse 3D U-Net and, optionally, the 2D
/// refiner.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    model: ModelConfig,
    coarse: NetworkParams<f32>,
    refiner: Option<NetworkParams<f32>>,
}

impl Reconstructor {
    /// Loads the coarse net from a stage-1 checkpoint and the refiner from a
    /// stage-2 checkpoint, if given. The two must agree on the geometry.
    pub fn from_checkpoints(coarse: &Checkpoint, refine: Option<&Checkpoint>) -> Result<Self> {
        let (model, s1) = Stage1State::from_checkpoint(coarse)?;
        let refiner = match refine {
            Some(c) => {
                let (m2, s2) = Stage2State::from_checkpoint(c)?;
                if m2.dims != model.dims
                    || m2.spacing != model.spacing
                    || m2.window != model.window
                    || m2.coarse != model.coarse
                {
                    return Err(Error::Geometry(
                        "stage-1 and stage-2 checkpoints disagree on the volume geometry".into(),
                    ));
                }
                Some((m2.refiner, s2.refiner))
            }
            None => None,
        };
        let mut model = model;
        let refiner = refiner.map(|(cfg, p)| {
            model.refiner = cfg;
            p
        });
        Ok(Self {
            model,
            coarse: s1.coarse,
            refiner,
        })
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    /// Normalized coarse volume, `[1, nz, ny, nx]`.
    pub fn coarse(&self, ap: &Projection<f32>, lat: &Projection<f32>) -> Result<Tensor<f32>> {
        let init = initial_estimate(ap, lat, &self.model)?;
        let [lo, hi] = self.model.window;
        let x = normalize_volume(&init, lo, hi)?;
        unet_forward(&self.coarse, &self.model.coarse, &x)
    }

    /// Back-projection, coarse net, per-slice refiner, back to HU.
    pub fn reconstruct(&self, ap: &Projection<f32>, lat: &Projection<f32>) -> Result<Volume<f32>> {
        let coarse = self.coarse(ap, lat)?;
        let refined = match &self.refiner {
            None => coarse,
            Some(params) => {
                let nz = self.model.dims[2];
                let slices = map_range(nz, |z| {
                    unet_forward(params, &self.model.refiner, &axial_slice(&coarse, z))
                });
                let mut data = Vec::with_capacity(coarse.len());
                for s in slices {
                    data.extend_from_slice(s?.data());
                }
                Tensor::new(coarse.shape().to_vec(), data)?
            }
        };
        let [lo, hi] = self.model.window;
        denormalize(&refined, self.model.dims, self.model.spacing, lo, hi)
    }
}

/// Full inference from a pair of projections and the two checkpoints.
pub fn reconstruct(
    ap: &Projection<f32>,
    lat: &Projection<f32>,
    coarse_ckpt: &Checkpoint,
    refine_ckpt: Option<&Checkpoint>,
) -> Result<Volume<f32>> {
    Reconstructor::from_checkpoints(coarse_ckpt, refine_ckpt)?.reconstruct(ap, lat)
}
