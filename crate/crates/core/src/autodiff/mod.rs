//! Dense tensors with a reverse-mode tape.
//!
//! Convolutions are cross-correlations (no kernel flip). Spatial rank is 2
//! or 3; a 2D map is `[C, H, W]`, a 3D map `[C, D, H, W]`.

mod conv;
mod graph;
mod layers;
mod tensor;

pub use conv::ConvGeom;
pub use graph::{CustomOp, Graph, Var};
pub use tensor::{cosine_similarity, Tensor};

/// Default negative slope of [`Graph::leaky_relu`] in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Default epsilon of [`Graph::instance_norm`].
pub const NORM_EPS: f64 = 1e-5;
