//! Optimizer, schedule, both training stages, checkpoints and inference.

mod checkpoint;
mod config;
mod infer;
mod log;
mod optim;
mod stage1;
mod stage2;

pub use checkpoint::{blob_path, Checkpoint};
pub use config::{ModelConfig, TrainConfig};
pub use infer::{initial_estimate, reconstruct, Reconstructor};
pub use log::{FileObserver, Observer, Recorder, StepRecord};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};
pub use stage1::{train_stage1, Stage1, Stage1State, STAGE1_COMPONENTS};
pub use stage2::{train_stage2, Stage2, Stage2State, STAGE2_COMPONENTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::geometry::{forward_project, normalize_volume, Axis, Volume};
use crate::{Error, Real, Result};

/// Independent random streams derived from one seed.
#[derive(Clone, Copy)]
enum Stream {
    Shuffle = 1,
    Slices = 2,
    Anchors = 3,
}

fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (stream as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(counter);
    rng
}

fn check_volume(vol: &Volume<f32>, model: &ModelConfig) -> Result<()> {
    let spacing_ok = vol
        .spacing
        .iter()
        .zip(&model.spacing)
        .all(|(a, b)| (a - b).abs() <= 1e-6 * b.abs());
    if vol.dims != model.dims || !spacing_ok {
        return Err(Error::Geometry(format!(
            "volume {:?} at {:?} mm does not match the configured {:?} at {:?} mm",
            vol.dims, vol.spacing, model.dims, model.spacing
        )));
    }
    Ok(())
}

/// Network input and normalized target for one ground-truth volume.
fn training_pair(vol: &Volume<f32>, model: &ModelConfig) -> Result<(Tensor<f32>, Tensor<f32>)> {
    check_volume(vol, model)?;
    let ap = forward_project(vol, Axis::Ap);
    let lat = forward_project(vol, Axis::Lat);
    let init = initial_estimate(&ap, &lat, model)?;
    let [lo, hi] = model.window;
    Ok((
        normalize_volume(&init, lo, hi)?,
        normalize_volume(vol, lo, hi)?,
    ))
}

/// Axial slice `z` of a `[1, nz, ny, nx]` tensor as `[1, ny, nx]`.
fn axial_slice<T: Real>(t: &Tensor<T>, z: usize) -> Tensor<T> {
    let s = t.shape();
    let n = s[2] * s[3];
    Tensor::new(vec![1, s[2], s[3]], t.data()[z * n..(z + 1) * n].to_vec())
        .expect("slice of a valid tensor")
}

fn check_finite(value: f64, what: &str, epoch: usize, step: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} at epoch {epoch}, step {step} (value {value})"
        )))
    }
}

fn check_stage(cfg: &TrainConfig, stage: u8) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != stage {
        return Err(Error::Config(format!(
            "stage {stage} trainer given a stage {} config",
            cfg.stage
        )));
    }
    Ok(())
}
