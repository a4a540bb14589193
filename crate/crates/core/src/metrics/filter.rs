//! Separable Gaussian filtering of 2D slices.

/// Normalized Gaussian taps of odd length `n`.
pub(crate) fn gaussian(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// A `w × h` image, row-major.
#[derive(Clone, Debug)]
pub(crate) struct Image {
    pub w: usize,
    pub h: usize,
    pub px: Vec<f64>,
}

impl Image {
    pub fn new(w: usize, h: usize, px: Vec<f64>) -> Self {
        debug_assert_eq!(px.len(), w * h);
        Self { w, h, px }
    }

    pub fn zip(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        let px = self
            .px
            .iter()
            .zip(&other.px)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Image::new(self.w, self.h, px)
    }

    /// Correlation with `taps` along both axes, keeping only fully covered
    /// positions.
    pub fn filter_valid(&self, taps: &[f64]) -> Image {
        let n = taps.len();
        let (w, h) = (self.w + 1 - n, self.h + 1 - n);
        let mut rows = vec![0.0; w * self.h];
        for y in 0..self.h {
            let src = &self.px[y * self.w..(y + 1) * self.w];
            for x in 0..w {
                rows[y * w + x] = taps.iter().zip(&src[x..]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * rows[(y + k) * w + x])
                    .sum();
            }
        }
        Image::new(w, h, out)
    }

    /// Same-size correlation with edge replication.
    pub fn filter_same(&self, taps: &[f64]) -> Image {
        let r = taps.len() / 2;
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let mut rows = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                rows[y * self.w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        t * self.px
                            [y * self.w + clamp(x as isize + k as isize - r as isize, self.w)]
                    })
                    .sum();
            }
        }
        let mut out = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        t * rows[clamp(y as isize + k as isize - r as isize, self.h) * self.w + x]
                    })
                    .sum();
            }
        }
        Image::new(self.w, self.h, out)
    }

    /// Keeps every second pixel in both directions.
    pub fn decimate(&self) -> Image {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut px = Vec::with_capacity(w * h);
        for y in (0..self.h).step_by(2) {
            for x in (0..self.w).step_by(2) {
                px.push(self.px[y * self.w + x]);
            }
        }
        Image::new(w, h, px)
    }
}
