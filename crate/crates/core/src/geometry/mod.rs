//! Parallel-beam geometry for two orthogonal views.
//!
//! Volumes are stored with `x` fastest: index `(z * ny + y) * nx + x`. The
//! anterior-posterior (AP) view integrates along `y`, the lateral (LAT) view
//! along `x`; both projections are stored `[z][u]` with `u` the remaining
//! in-plane axis. Line integrals are in HU·mm.

mod volume;

pub use volume::{Axis, Projection, Volume, HU_MAX, HU_MIN};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::Real;

/// Default intensity window mapped onto `[0, 1]` for the networks.
pub const DEFAULT_WINDOW: (f64, f64) = (-1000.0, 1000.0);

/// Line integrals of `vol` along the view's axis.
pub fn forward_project<T: Real>(vol: &Volume<T>, axis: Axis) -> Projection<T> {
    let [nx, ny, nz] = vol.dims;
    let sp = T::lit(vol.spacing[axis.ray_axis()]);
    let v = &vol.values;
    let values = match axis {
        Axis::Ap => {
            let mut p = vec![T::zero(); nz * nx];
            for z in 0..nz {
                let row = &mut p[z * nx..(z + 1) * nx];
                for y in 0..ny {
                    let src = &v[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                    for (o, &s) in row.iter_mut().zip(src) {
                        *o = *o + s;
                    }
                }
                for o in row.iter_mut() {
                    *o = *o * sp;
                }
            }
            p
        }
        Axis::Lat => {
            let mut p = vec![T::zero(); nz * ny];
            for z in 0..nz {
                for y in 0..ny {
                    let src = &v[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                    p[z * ny + y] = src.iter().copied().sum::<T>() * sp;
                }
            }
            p
        }
    };
    Projection::from_volume_geometry(axis, vol.dims, vol.spacing, values)
}

/// Exact adjoint of [`forward_project`]: spreads each pixel along its ray,
/// scaled by the voxel spacing along that ray.
pub fn smear<T: Real>(p: &Projection<T>, dims: [usize; 3], spacing: [f64; 3]) -> Result<Volume<T>> {
    p.check_against(dims)?;
    let [nx, ny, nz] = dims;
    let sp = T::lit(spacing[p.axis.ray_axis()]);
    let mut values = vec![T::zero(); nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            let dst = &mut values[(z * ny + y) * nx..(z * ny + y + 1) * nx];
            match p.axis {
                Axis::Ap => {
                    for (o, &s) in dst.iter_mut().zip(&p.values[z * nx..(z + 1) * nx]) {
                        *o = s * sp;
                    }
                }
                Axis::Lat => {
                    let s = p.values[z * ny + y] * sp;
                    dst.iter_mut().for_each(|o| *o = s);
                }
            }
        }
    }
    Volume::new(dims, spacing, values)
}

/// Two-view back-projection: each view is smeared along its ray and divided
/// by the physical ray length, then the two estimates are averaged. A
/// constant volume round-trips to itself.
pub fn back_project<T: Real>(
    ap: &Projection<T>,
    lat: &Projection<T>,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> Result<Volume<T>> {
    if ap.axis != Axis::Ap || lat.axis != Axis::Lat {
        return Err(Error::Geometry(
            "back_project expects an AP and a LAT projection".into(),
        ));
    }
    ap.check_against(dims)?;
    lat.check_against(dims)?;
    let [nx, ny, nz] = dims;
    let half = T::lit(0.5);
    let ap_len = T::lit(ny as f64 * spacing[1]);
    let lat_len = T::lit(nx as f64 * spacing[0]);
    let mut values = vec![T::zero(); nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            let l = lat.values[z * ny + y] / lat_len;
            let dst = &mut values[(z * ny + y) * nx..(z * ny + y + 1) * nx];
            for (o, &a) in dst.iter_mut().zip(&ap.values[z * nx..(z + 1) * nx]) {
                *o = half * (a / ap_len + l);
            }
        }
    }
    Volume::new(dims, spacing, values)
}

/// Maps HU in `[lo, hi]` onto `[0, 1]`, clamping outside. The result is a
/// `[1, nz, ny, nx]` tensor ready for a 3D network.
pub fn normalize_volume<T: Real>(vol: &Volume<T>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    check_window(lo, hi)?;
    let [nx, ny, nz] = vol.dims;
    let data = vol
        .values
        .iter()
        .map(|&v| normalize_value(v, lo, hi))
        .collect();
    Tensor::new(vec![1, nz, ny, nx], data)
}

#[inline]
pub fn normalize_value<T: Real>(v: T, lo: f64, hi: f64) -> T {
    let (lo_t, w) = (T::lit(lo), T::lit(hi - lo));
    ((v - lo_t) / w).max(T::zero()).min(T::one())
}

#[inline]
pub fn denormalize_value<T: Real>(u: T, lo: f64, hi: f64) -> T {
    let u = u.max(T::zero()).min(T::one());
    T::lit(lo) + u * T::lit(hi - lo)
}

/// Inverse of [`normalize_volume`] on `[0, 1]`; values outside are clamped
/// first.
pub fn denormalize<T: Real>(
    t: &Tensor<T>,
    dims: [usize; 3],
    spacing: [f64; 3],
    lo: f64,
    hi: f64,
) -> Result<Volume<T>> {
    check_window(lo, hi)?;
    if t.len() != dims.iter().product::<usize>() {
        return Err(Error::Geometry(format!(
            "tensor of shape {:?} does not fill volume {dims:?}",
            t.shape()
        )));
    }
    let values = t
        .data()
        .iter()
        .map(|&u| denormalize_value(u, lo, hi))
        .collect();
    Volume::new(dims, spacing, values)
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::Config(format!(
            "normalization window must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}
