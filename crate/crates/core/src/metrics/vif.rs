use super::filter::{gaussian, Image};

/// Noise variance of the visual channel, in 0-255 grey levels squared.
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_SCALES: usize = 4;

const TINY: f64 = 1e-10;

/// Information terms `(distorted, reference)` of one slice pair, summed over
/// scales. `reference` is the ground truth.
///
/// Pixel-domain VIF with 'same' filtering and edge replication, so that
/// small slices still yield every scale. The usual epsilon floors are
/// dropped where the noise variance already keeps denominators positive;
/// this makes `vif(x, x)` exactly 1.
pub(crate) fn vif_terms(distorted: &Image, reference: &Image) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut r = reference.clone();
    let mut d = distorted.clone();
    for scale in 1..=VIF_SCALES {
        let n = (1usize << (VIF_SCALES - scale + 1)) + 1;
        let taps = gaussian(n, n as f64 / 5.0);
        if scale > 1 {
            r = r.filter_same(&taps).decimate();
            d = d.filter_same(&taps).decimate();
        }
        let mu1 = r.filter_same(&taps);
        let mu2 = d.filter_same(&taps);
        let s11 = r.zip(&r, |a, b| a * b).filter_same(&taps);
        let s22 = d.zip(&d, |a, b| a * b).filter_same(&taps);
        let s12 = r.zip(&d, |a, b| a * b).filter_same(&taps);
        for i in 0..mu1.px.len() {
            let (m1, m2) = (mu1.px[i], mu2.px[i]);
            let mut v1 = (s11.px[i] - m1 * m1).max(0.0);
            let v2 = (s22.px[i] - m2 * m2).max(0.0);
            let c12 = s12.px[i] - m1 * m2;
            let (mut g, mut sv);
            if v1 < TINY {
                g = 0.0;
                sv = v2;
                v1 = 0.0;
            } else {
                g = c12 / v1;
                sv = v2 - g * c12;
            }
            if v2 < TINY {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = v2;
                g = 0.0;
            }
            sv = sv.max(0.0);
            num += (1.0 + g * g * v1 / (sv + VIF_NOISE_VAR)).log10();
            den += (1.0 + v1 / VIF_NOISE_VAR).log10();
        }
    }
    (num, den)
}
