use std::collections::VecDeque;

use crate::geometry::Volume;
use crate::{Error, Real, Result};

/// Voxels above this HU seed the body mask.
pub const BODY_THRESHOLD: f64 = -500.0;
/// Voxels below this HU inside the body count as lung.
pub const LUNG_THRESHOLD: f64 = -300.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>) -> Result<Self> {
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "mask of {} voxels does not fill {dims:?}",
                voxels.len()
            )));
        }
        Ok(Self { dims, voxels })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            voxels: vec![false; dims.iter().product()],
        }
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }
}

fn neighbors6(i: usize, [nx, ny, nz]: [usize; 3]) -> impl Iterator<Item = usize> {
    let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
    let plane = nx * ny;
    [
        (x > 0).then(|| i - 1),
        (x + 1 < nx).then(|| i + 1),
        (y > 0).then(|| i - nx),
        (y + 1 < ny).then(|| i + nx),
        (z > 0).then(|| i - plane),
        (z + 1 < nz).then(|| i + plane),
    ]
    .into_iter()
    .flatten()
}

/// Largest 6-connected component of `mask`; the first one found wins ties.
fn largest_component(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let mut label = vec![0u32; mask.len()];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in neighbors6(i, dims) {
                if mask[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    label.iter().map(|&l| l != 0 && l == best.0).collect()
}

/// Per axial slice, marks background pixels that are not 4-connected to the
/// slice border.
fn fill_holes_axial(mask: &mut [bool], [nx, ny, nz]: [usize; 3]) {
    let plane = nx * ny;
    for z in 0..nz {
        let slice = &mut mask[z * plane..(z + 1) * plane];
        let mut outside = vec![false; plane];
        let mut queue: VecDeque<usize> = (0..plane)
            .filter(|&i| {
                let (x, y) = (i % nx, i / nx);
                (x == 0 || y == 0 || x + 1 == nx || y + 1 == ny) && !slice[i]
            })
            .collect();
        for &i in &queue {
            outside[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % nx, i / nx);
            let nb = [
                (x > 0).then(|| i - 1),
                (x + 1 < nx).then(|| i + 1),
                (y > 0).then(|| i - nx),
                (y + 1 < ny).then(|| i + nx),
            ];
            for j in nb.into_iter().flatten() {
                if !slice[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
        for (m, o) in slice.iter_mut().zip(outside) {
            *m = !o;
        }
    }
}

/// Body outline: the largest 6-connected region above `threshold` HU with
/// enclosed cavities (lungs, airways) filled slice by slice.
pub fn body_mask<T: Real>(vol: &Volume<T>, threshold: f64) -> BinaryMask {
    let seed: Vec<bool> = vol.values.iter().map(|v| v.as_f64() > threshold).collect();
    let mut body = largest_component(&seed, vol.dims);
    if body.iter().any(|&b| b) {
        fill_holes_axial(&mut body, vol.dims);
    }
    BinaryMask {
        dims: vol.dims,
        voxels: body,
    }
}

/// Voxels below `threshold` HU inside `body`.
pub fn segment_lung<T: Real>(
    vol: &Volume<T>,
    threshold: f64,
    body: &BinaryMask,
) -> Result<BinaryMask> {
    if body.dims != vol.dims {
        return Err(Error::Shape(format!(
            "body mask {:?} vs volume {:?}",
            body.dims, vol.dims
        )));
    }
    let voxels = vol
        .values
        .iter()
        .zip(&body.voxels)
        .map(|(v, &b)| b && v.as_f64() < threshold)
        .collect();
    BinaryMask::new(vol.dims, voxels)
}

/// Lung mask with the default thresholds.
pub fn lung_mask<T: Real>(vol: &Volume<T>) -> BinaryMask {
    let body = body_mask(vol, BODY_THRESHOLD);
    segment_lung(vol, LUNG_THRESHOLD, &body).expect("same dims")
}

/// `2|a ∩ b| / (|a| + |b|)`, with two empty masks scoring 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!("masks {:?} vs {:?}", a.dims, b.dims)));
    }
    let both = a
        .voxels
        .iter()
        .zip(&b.voxels)
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}
