//! Image-quality metrics on HU volumes.
//!
//! Where a metric is asymmetric the ground truth is the second argument.

mod filter;
mod mask;
mod ssim;
mod vif;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use mask::{
    body_mask, dice, lung_mask, segment_lung, BinaryMask, BODY_THRESHOLD, LUNG_THRESHOLD,
};
pub use ssim::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use vif::{VIF_NOISE_VAR, VIF_SCALES};

use crate::autodiff::Tensor;
use crate::geometry::{normalize_value, Volume, DEFAULT_WINDOW};
use crate::losses::PerceptualExtractor;
use crate::parallel::map_range;
use crate::{Error, Real, Result};
use filter::Image;

/// Dynamic range for PSNR and SSIM: the width of the network window.
pub const PSNR_PEAK: f64 = 2000.0;
/// PSNR reported for identical volumes.
pub const PSNR_CAP: f64 = 100.0;

fn check_dims<T: Real>(a: &Volume<T>, b: &Volume<T>) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "volume dims differ: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

fn axial_images<T: Real>(v: &Volume<T>, f: impl Fn(f64) -> f64) -> Vec<Image> {
    let [nx, ny, nz] = v.dims;
    (0..nz)
        .map(|z| Image::new(nx, ny, v.axial(z).iter().map(|x| f(x.as_f64())).collect()))
        .collect()
}

/// Mean absolute difference in HU.
pub fn mae<T: Real>(pred: &Volume<T>, gt: &Volume<T>) -> Result<f64> {
    check_dims(pred, gt)?;
    let s: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(pred: &Volume<T>, gt: &Volume<T>, peak: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    let mse: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// SSIM averaged over axial slices (Gaussian window of 11, sigma 1.5,
/// dynamic range [`PSNR_PEAK`]).
pub fn ssim<T: Real>(pred: &Volume<T>, gt: &Volume<T>) -> Result<f64> {
    check_dims(pred, gt)?;
    let [nx, ny, _] = gt.dims;
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs axial slices of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {nx}x{ny}"
        )));
    }
    let a = axial_images(pred, |x| x);
    let b = axial_images(gt, |x| x);
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| ssim::ssim_slice(x, y, PSNR_PEAK))
        .sum();
    Ok(total / a.len() as f64)
}

/// HU to 0-255 grey levels through the network window.
fn grey(hu: f64) -> f64 {
    let (lo, hi) = DEFAULT_WINDOW;
    255.0 * normalize_value(hu, lo, hi)
}

/// Pixel-domain visual information fidelity of `pred` relative to `gt`,
/// pooled over all axial slices and four scales. A reference without any
/// local variance carries no information; it scores 1.
pub fn vif<T: Real>(pred: &Volume<T>, gt: &Volume<T>) -> Result<f64> {
    check_dims(pred, gt)?;
    let d = axial_images(pred, grey);
    let r = axial_images(gt, grey);
    let (num, den) = d
        .iter()
        .zip(&r)
        .map(|(d, r)| vif::vif_terms(d, r))
        .fold((0.0, 0.0), |(n, m), (a, b)| (n + a, m + b));
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Mean over axial slices and extractor levels of the per-position L2
/// distance between unit-normalized feature vectors. Slices enter the
/// extractor normalized through the network window.
pub fn perceptual_distance<T: Real>(
    extractor: &PerceptualExtractor<f32>,
    pred: &Volume<T>,
    gt: &Volume<T>,
) -> Result<f64> {
    check_dims(pred, gt)?;
    let [nx, ny, nz] = gt.dims;
    let (lo, hi) = DEFAULT_WINDOW;
    let slice = |v: &Volume<T>, z: usize| {
        let px = v
            .axial(z)
            .iter()
            .map(|&x| normalize_value(x.as_f64(), lo, hi) as f32)
            .collect();
        Tensor::new(vec![1, ny, nx], px)
    };
    let mut total = 0.0;
    for z in 0..nz {
        let fa = extractor.features(&slice(pred, z)?)?;
        let fb = extractor.features(&slice(gt, z)?)?;
        let per_level: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(a, b)| unit_feature_distance(a, b))
            .sum();
        total += per_level / fa.len() as f64;
    }
    Ok(total / nz as f64)
}

fn unit_feature_distance(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let ch = a.shape()[0];
    let plane = a.len() / ch;
    let (a, b) = (a.data(), b.data());
    let unit = |d: &[f32], p: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..ch).map(|c| d[c * plane + p] as f64).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            v
        } else {
            v.into_iter().map(|x| x / n).collect()
        }
    };
    let total: f64 = (0..plane)
        .map(|p| {
            let (u, w) = (unit(a, p), unit(b, p));
            u.iter()
                .zip(&w)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / plane as f64
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub volume: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub vif: f64,
    pub perceptual: f64,
    pub dice: f64,
}

pub const REPORT_HEADER: &str = "volume,mae,psnr,ssim,vif,perceptual,dice";

impl MetricsRow {
    fn values(&self) -> [f64; 6] {
        [
            self.mae,
            self.psnr,
            self.ssim,
            self.vif,
            self.perceptual,
            self.dice,
        ]
    }

    fn from_values(volume: &str, v: [f64; 6]) -> Self {
        Self {
            volume: volume.into(),
            mae: v[0],
            psnr: v[1],
            ssim: v[2],
            vif: v[3],
            perceptual: v[4],
            dice: v[5],
        }
    }
}

/// All metrics for one prediction against its ground truth.
pub fn evaluate_pair<T: Real>(
    name: &str,
    pred: &Volume<T>,
    gt: &Volume<T>,
    extractor: &PerceptualExtractor<f32>,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        volume: name.into(),
        mae: mae(pred, gt)?,
        psnr: psnr(pred, gt, PSNR_PEAK)?,
        ssim: ssim(pred, gt)?,
        perceptual: perceptual_distance(extractor, pred, gt)?,
        vif: vif(pred, gt)?,
        dice: dice(&lung_mask(pred), &lung_mask(gt))?,
    })
}

/// Per-volume rows (sorted by name) plus mean and population standard
/// deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsRow,
    pub std: MetricsRow,
}

impl MetricsReport {
    pub fn from_rows(mut rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("no volumes to report".into()));
        }
        rows.sort_by(|a, b| a.volume.cmp(&b.volume));
        let n = rows.len() as f64;
        let mut mean = [0.0; 6];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 6];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        Ok(Self {
            rows,
            mean: MetricsRow::from_values("mean", mean),
            std: MetricsRow::from_values("std", var.map(f64::sqrt)),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in self.rows.iter().chain([&self.mean, &self.std]) {
            let _ = write!(s, "{}", r.volume);
            for v in r.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Pairs predictions with ground truths by name and evaluates every pair.
/// Names present on only one side are an error that lists them.
pub fn evaluate<T: Real>(
    preds: &[(String, Volume<T>)],
    gts: &[(String, Volume<T>)],
    extractor: &PerceptualExtractor<f32>,
) -> Result<MetricsReport> {
    let p: BTreeMap<&str, &Volume<T>> = preds.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let g: BTreeMap<&str, &Volume<T>> = gts.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let unpaired: Vec<&str> = p
        .keys()
        .filter(|k| !g.contains_key(*k))
        .chain(g.keys().filter(|k| !p.contains_key(*k)))
        .copied()
        .collect();
    if !unpaired.is_empty() || p.len() != preds.len() || g.len() != gts.len() {
        return Err(Error::Config(format!(
            "prediction and ground-truth sets do not pair up; unpaired: {}",
            unpaired.join(", ")
        )));
    }
    let pairs: Vec<(&str, &Volume<T>, &Volume<T>)> =
        p.iter().map(|(n, v)| (*n, *v, g[n])).collect();
    let rows = map_range(pairs.len(), |i| {
        let (n, a, b) = pairs[i];
        evaluate_pair(n, a, b, extractor)
    });
    MetricsReport::from_rows(rows.into_iter().collect::<Result<_>>()?)
}
