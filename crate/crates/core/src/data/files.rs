use std::path::Path;

use crate::fileio::{f32_le_bytes, read, write_atomic, Header, DATA_MARKER};
use crate::geometry::{Axis, Projection, Volume};
use crate::Result;

const VOLUME_MAGIC: &str = "ORTHOCT-VOLUME 1";
const PROJECTION_MAGIC: &str = "ORTHOCT-PROJECTION 1";

fn join<V: std::fmt::Display>(v: &[V]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a text header followed by raw little-endian f32 voxels.
pub fn save_volume(vol: &Volume<f32>, path: &Path) -> Result<()> {
    let mut bytes = format!(
        "{VOLUME_MAGIC}\ndims {}\nspacing {}\ndtype f32le\n{DATA_MARKER}\n",
        join(&vol.dims),
        join(&vol.spacing)
    )
    .into_bytes();
    bytes.extend(f32_le_bytes(vol.values.iter().copied()));
    write_atomic(path, &bytes)
}

pub fn load_volume(path: &Path) -> Result<Volume<f32>> {
    let bytes = read(path)?;
    let h = Header::parse(path, &bytes, VOLUME_MAGIC)?;
    let dims: [usize; 3] = h.parsed("dims")?;
    let spacing: [f64; 3] = h.parsed("spacing")?;
    let values = h.f32_payload(dims.iter().product())?;
    Volume::new(dims, spacing, values).map_err(|e| h.err(e.to_string()))
}

/// Same layout as volumes, with the view axis and the geometry of the
/// volume the rays crossed.
pub fn save_projection(p: &Projection<f32>, path: &Path) -> Result<()> {
    let mut bytes = format!(
        "{PROJECTION_MAGIC}\naxis {}\ndims {}\npixel_spacing {}\nvolume_dims {}\n\
         volume_spacing {}\ndtype f32le\n{DATA_MARKER}\n",
        p.axis.tag(),
        join(&p.dims),
        join(&p.pixel_spacing),
        join(&p.volume_dims),
        join(&p.volume_spacing)
    )
    .into_bytes();
    bytes.extend(f32_le_bytes(p.values.iter().copied()));
    write_atomic(path, &bytes)
}

pub fn load_projection(path: &Path) -> Result<Projection<f32>> {
    let bytes = read(path)?;
    let h = Header::parse(path, &bytes, PROJECTION_MAGIC)?;
    let tag = h.single("axis")?;
    let axis = Axis::from_tag(tag).ok_or_else(|| h.err(format!("unknown axis {tag:?}")))?;
    let dims: [usize; 2] = h.parsed("dims")?;
    let volume_dims: [usize; 3] = h.parsed("volume_dims")?;
    let volume_spacing: [f64; 3] = h.parsed("volume_spacing")?;
    let values = h.f32_payload(dims[0] * dims[1])?;
    let p = Projection::from_volume_geometry(axis, volume_dims, volume_spacing, values);
    if p.dims != dims {
        return Err(h.err(format!(
            "dims {dims:?} disagree with the {} face of volume {volume_dims:?}",
            axis.tag()
        )));
    }
    Ok(p)
}
