use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Volume, HU_MAX, HU_MIN};
use crate::{Error, Result};

/// Closed HU interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuRange {
    pub lo: f64,
    pub hi: f64,
}

impl HuRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn at(self, t: f64) -> f64 {
        self.lo + t * (self.hi - self.lo)
    }
}

/// Parameters of the synthetic chest phantom. Shape parameters are drawn
/// per phantom from `seed`; `jitter` scales how far they stray from the
/// nominal anatomy (0 gives the nominal phantom).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub air_hu: f64,
    pub body_hu: HuRange,
    pub lung_hu: HuRange,
    pub spine_hu: HuRange,
    pub jitter: f64,
}

impl PhantomSpec {
    /// 32³ voxels at 2.8 mm.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            dims: [32, 32, 32],
            spacing: [2.8; 3],
            air_hu: -1000.0,
            body_hu: HuRange::new(0.0, 60.0),
            lung_hu: HuRange::new(-850.0, -700.0),
            spine_hu: HuRange::new(400.0, 900.0),
            jitter: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "phantom needs positive dims and spacing, got {:?} / {:?}",
                self.dims, self.spacing
            )));
        }
        let ranges = [
            ("air", HuRange::new(self.air_hu, self.air_hu)),
            ("body", self.body_hu),
            ("lung", self.lung_hu),
            ("spine", self.spine_hu),
        ];
        for (name, r) in ranges {
            if !(HU_MIN <= r.lo && r.lo <= r.hi && r.hi <= HU_MAX) {
                return Err(Error::Config(format!(
                    "{name} HU range [{}, {}] must be ordered and inside [{HU_MIN}, {HU_MAX}]",
                    r.lo, r.hi
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "jitter {} outside [0, 1]",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// A generated phantom with its analytic lung and spine masks.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume<f32>,
    pub lung_mask: Vec<bool>,
    pub spine_mask: Vec<bool>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        ((u - self.cx) / self.ax).powi(2) + ((v - self.cy) / self.ay).powi(2) <= 1.0
    }
}

struct Lung {
    section: Ellipse,
    cz: f64,
    az: f64,
    hu: f64,
}

impl Lung {
    fn contains(&self, u: f64, v: f64, w: f64) -> bool {
        let r = ((u - self.section.cx) / self.section.ax).powi(2)
            + ((v - self.section.cy) / self.section.ay).powi(2)
            + ((w - self.cz) / self.az).powi(2);
        r <= 1.0
    }
}

/// Voxel centre in `[-1, 1]`.
fn centred(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

/// Phantom layout in normalized coordinates (`u` left-right, `v`
/// anterior-posterior, `w` cranio-caudal, each in `[-1, 1]`):
///
/// * an elliptic body cylinder along `w`,
/// * two lung ellipsoids left and right of the midline,
/// * a spine cylinder behind the lungs whose HU oscillates along `w` to
///   mimic vertebrae and discs.
///
/// The parameter ranges keep the lungs laterally clear of the spine and
/// about a tenth of the body radius inside the body outline.
pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j = spec.jitter;
    let mut jit = |nominal: f64, spread: f64| nominal + j * spread * rng.gen_range(-1.0..=1.0);

    let body = Ellipse {
        cx: jit(0.0, 0.03),
        cy: jit(0.0, 0.03),
        ax: jit(0.84, 0.05),
        ay: jit(0.64, 0.05),
    };
    let spine_r = jit(0.08, 0.01);
    let spine_c = (body.cx, body.cy + 0.6 * body.ay);
    let vertebrae = 3.0 + jit(1.0, 1.0).round();
    let phase = jit(0.0, std::f64::consts::PI);
    let mut lungs = Vec::with_capacity(2);
    for side in [-1.0, 1.0] {
        let ax = jit(0.19, 0.02);
        let ay = jit(0.3, 0.03);
        let offset = jit(0.35, 0.02);
        lungs.push(Lung {
            section: Ellipse {
                cx: body.cx + side * offset,
                cy: body.cy + jit(-0.05, 0.03),
                ax,
                ay,
            },
            cz: jit(0.0, 0.05),
            az: jit(0.82, 0.06),
            hu: 0.0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let body_hu = spec.body_hu.sample(&mut rng);
    for lung in &mut lungs {
        lung.hu = spec.lung_hu.sample(&mut rng);
    }

    let [nx, ny, nz] = spec.dims;
    let n = nx * ny * nz;
    let mut values = vec![spec.air_hu as f32; n];
    let mut lung_mask = vec![false; n];
    let mut spine_mask = vec![false; n];
    for z in 0..nz {
        let w = centred(z, nz);
        let vertebral = 0.5 + 0.5 * (std::f64::consts::PI * vertebrae * w + phase).cos();
        for y in 0..ny {
            let v = centred(y, ny);
            for x in 0..nx {
                let u = centred(x, nx);
                if !body.contains(u, v) {
                    continue;
                }
                let i = (z * ny + y) * nx + x;
                let (du, dv) = (u - spine_c.0, v - spine_c.1);
                values[i] = if du * du + dv * dv <= spine_r * spine_r {
                    spine_mask[i] = true;
                    spec.spine_hu.at(vertebral)
                } else if let Some(l) = lungs.iter().find(|l| l.contains(u, v, w)) {
                    lung_mask[i] = true;
                    l.hu
                } else {
                    body_hu
                } as f32;
            }
        }
    }
    let volume = Volume::from_hu(spec.dims, spec.spacing, values)?;
    Ok(Phantom {
        volume,
        lung_mask,
        spine_mask,
    })
}

/// The phantom volume alone.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume<f32>> {
    Ok(build_phantom(spec)?.volume)
}
