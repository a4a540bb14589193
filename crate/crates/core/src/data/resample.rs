use crate::geometry::Volume;
use crate::{Error, Real, Result};

/// Linear interpolation weights for one axis: target voxel `k` samples the
/// source at `(k + 0.5) * new / old - 0.5`, clamped to the source extent.
fn axis_taps(n_src: usize, s_src: f64, n_dst: usize, s_dst: f64) -> Vec<(usize, usize, f64)> {
    let last = (n_src - 1) as f64;
    (0..n_dst)
        .map(|k| {
            let pos = ((k as f64 + 0.5) * s_dst / s_src - 0.5).clamp(0.0, last);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(n_src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling in physical coordinates (voxel centres at
/// `(i + 0.5) * spacing`). Samples beyond the source clamp to the edge.
pub fn resample<T: Real>(
    vol: &Volume<T>,
    new_dims: [usize; 3],
    new_spacing: [f64; 3],
) -> Result<Volume<T>> {
    if new_dims.contains(&0) || new_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!(
            "resample targets must be positive, got {new_dims:?} / {new_spacing:?}"
        )));
    }
    let taps: Vec<_> = (0..3)
        .map(|a| axis_taps(vol.dims[a], vol.spacing[a], new_dims[a], new_spacing[a]))
        .collect();
    // one axis at a time: x, then y, then z
    let mut dims = vol.dims;
    let mut data = vol.values.clone();
    for (axis, taps) in taps.iter().enumerate() {
        let mut out_dims = dims;
        out_dims[axis] = new_dims[axis];
        let stride: usize = dims[..axis].iter().product();
        let outer: usize = dims[axis + 1..].iter().product();
        let (n_in, n_out) = (dims[axis], out_dims[axis]);
        let mut out = vec![T::zero(); stride * n_out * outer];
        for o in 0..outer {
            for (k, &(i0, i1, f)) in taps.iter().enumerate() {
                let (w0, w1) = (T::lit(1.0 - f), T::lit(f));
                let src0 = &data[(o * n_in + i0) * stride..][..stride];
                let src1 = &data[(o * n_in + i1) * stride..][..stride];
                let dst = &mut out[(o * n_out + k) * stride..][..stride];
                for ((d, &a), &b) in dst.iter_mut().zip(src0).zip(src1) {
                    *d = if f == 0.0 { a } else { w0 * a + w1 * b };
                }
            }
        }
        dims = out_dims;
        data = out;
    }
    Volume::new(new_dims, new_spacing, data)
}
