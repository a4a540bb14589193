//! U-Nets, feature heads and the patch discriminator.

mod discriminator;
mod params;
mod unet;

pub use discriminator::{build_discriminator, disc_forward, disc_graph, DiscConfig};
pub use params::{accumulate_grads, Bound, Grads, NetworkParams};
pub use unet::{
    build_unet, encoder_graph, feature_forward, feature_graph, unet_forward, unet_graph,
    FeatureBundle, UNetConfig, UNetTaps, UpsampleMode, FEATURE_EPS,
};
