use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Valid HU range; values are clamped into it on ingest.
pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3071.0;

/// A 3D image in HU with physical voxel spacing (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    /// `[nx, ny, nz]`
    pub dims: [usize; 3],
    /// mm per voxel along x, y, z
    pub spacing: [f64; 3],
    pub values: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], values: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("zero extent in dims {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Geometry(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::Geometry(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("volume".into()));
        }
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    /// Ingest path: like [`Volume::new`] but clamps into `[HU_MIN, HU_MAX]`.
    pub fn from_hu(dims: [usize; 3], spacing: [f64; 3], values: Vec<T>) -> Result<Self> {
        let mut v = Self::new(dims, spacing, values)?;
        let (lo, hi) = (T::lit(HU_MIN), T::lit(HU_MAX));
        for x in &mut v.values {
            *x = x.max(lo).min(hi);
        }
        Ok(v)
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.index(x, y, z)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Axial slice `z` as a row-major `[ny][nx]` slice.
    pub fn axial(&self, z: usize) -> &[T] {
        let n = self.dims[0] * self.dims[1];
        &self.values[z * n..(z + 1) * n]
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Viewing direction of a projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    /// anterior-posterior: rays along y
    Ap,
    /// lateral: rays along x
    Lat,
}

impl Axis {
    /// Volume axis the rays travel along (0 = x, 1 = y).
    pub fn ray_axis(self) -> usize {
        match self {
            Axis::Ap => 1,
            Axis::Lat => 0,
        }
    }

    /// Volume axis that becomes the projection's horizontal axis.
    pub fn detector_axis(self) -> usize {
        match self {
            Axis::Ap => 0,
            Axis::Lat => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Axis::Ap => "ap",
            Axis::Lat => "lat",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "ap" | "AP" => Some(Axis::Ap),
            "lat" | "LAT" => Some(Axis::Lat),
            _ => None,
        }
    }
}

/// A 2D image of line integrals (HU·mm), stored `[height][width]` where the
/// height axis is the volume's z.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T = f32> {
    pub axis: Axis,
    /// `[width, height]`
    pub dims: [usize; 2],
    /// mm per pixel along width, height
    pub pixel_spacing: [f64; 2],
    /// Extent of the volume the rays crossed.
    pub volume_dims: [usize; 3],
    pub volume_spacing: [f64; 3],
    pub values: Vec<T>,
}

impl<T: Real> Projection<T> {
    pub fn from_volume_geometry(
        axis: Axis,
        volume_dims: [usize; 3],
        volume_spacing: [f64; 3],
        values: Vec<T>,
    ) -> Self {
        let u = axis.detector_axis();
        Self {
            axis,
            dims: [volume_dims[u], volume_dims[2]],
            pixel_spacing: [volume_spacing[u], volume_spacing[2]],
            volume_dims,
            volume_spacing,
            values,
        }
    }

    /// Confirms this projection matches the face of a `dims` volume.
    pub fn check_against(&self, dims: [usize; 3]) -> Result<()> {
        let want = [dims[self.axis.detector_axis()], dims[2]];
        if self.dims != want || self.values.len() != want[0] * want[1] {
            return Err(Error::Geometry(format!(
                "{} projection is {:?} but the volume face is {want:?}",
                self.axis.tag(),
                self.dims
            )));
        }
        Ok(())
    }
}
