use super::filter::{gaussian, Image};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean SSIM of one slice pair over the fully covered window positions.
///
/// Written so that `ssim(x, x)` is exactly 1: both arguments go through the
/// same arithmetic.
pub(crate) fn ssim_slice(x: &Image, y: &Image, range: f64) -> f64 {
    let taps = gaussian(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mx = x.filter_valid(&taps);
    let my = y.filter_valid(&taps);
    let xx = x.zip(x, |a, b| a * b).filter_valid(&taps);
    let yy = y.zip(y, |a, b| a * b).filter_valid(&taps);
    let xy = x.zip(y, |a, b| a * b).filter_valid(&taps);
    let n = mx.px.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx.px[i], my.px[i]);
            let vx = xx.px[i] - ux * ux;
            let vy = yy.px[i] - uy * uy;
            let cxy = xy.px[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / n as f64
}
