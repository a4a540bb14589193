//! Synthetic chest phantoms, volume and projection files, resampling and
//! dataset splits.

mod files;
mod phantom;
mod resample;
mod split;

pub use files::{load_projection, load_volume, save_projection, save_volume};
pub use phantom::{build_phantom, generate_phantom, HuRange, Phantom, PhantomSpec};
pub use resample::resample;
pub use split::{split_dataset, DatasetManifest, ManifestEntry, Split, SplitTag};
