//! Coarse-to-fine reconstruction of CT volumes from two orthogonal X-ray
//! projections.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: dense tensors and a reverse-mode tape with the handful of
//!   primitives the networks need (convolution, pooling, instance norm, ...).
//! * [`geometry`]: parallel-beam forward projection and two-view
//!   back-projection.
//! * [`networks`]: the coarse 3D U-Net, the 2D refiner, the feature network
//!   with projection heads, and a patch discriminator.
//! * [`losses`]: reconstruction, perceptual, adversarial and the semantic /
//!   anatomical contrastive objectives, plus the EMA teacher update.
//! * [`pipeline`]: AdamW, cosine schedule, both training stages,
//!   checkpoints and inference.
//! * [`data`]: synthetic chest phantoms, volume files, resampling, splits.
//! * [`metrics`]: MAE, PSNR, SSIM, VIF, perceptual distance and lung DICE.
//!
//! Heavy inner loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results are
//! bitwise identical either way.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
mod fileio;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod parallel;
pub mod pipeline;
mod real;

pub use error::{Error, Result};
pub use real::Real;
