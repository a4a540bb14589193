use rand::Rng;

use super::ContrastiveConfig;
use crate::autodiff::{cosine_similarity, CustomOp, Graph, Tensor, Var};
use crate::error::shape_err;
use crate::networks::FEATURE_EPS;
use crate::{Real, Result};

/// Feature-map position as `(row, col)`.
pub type Pixel = (usize, usize);

/// `[D, H, W]` feature map stored position-major in double precision.
struct Vectors {
    dim: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Vectors {
    fn new<T: Real>(map: &Tensor<T>) -> Result<Self> {
        let &[dim, h, w] = map.shape() else {
            return Err(shape_err!(
                "feature map must be [D, H, W], got {:?}",
                map.shape()
            ));
        };
        let plane = h * w;
        let src = map.data();
        let mut data = vec![0.0; dim * plane];
        for p in 0..plane {
            for c in 0..dim {
                data[p * dim + c] = src[c * plane + p].as_f64();
            }
        }
        Ok(Self { dim, h, w, data })
    }

    fn at(&self, (r, c): Pixel) -> &[f64] {
        let p = r * self.w + c;
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    fn check(&self, px: Pixel) -> Result<()> {
        if px.0 >= self.h || px.1 >= self.w {
            return Err(shape_err!(
                "anchor {px:?} outside {}x{} feature map",
                self.h,
                self.w
            ));
        }
        Ok(())
    }

    fn neighbors(&self, anchor: Pixel, n: usize, radius: usize) -> Vec<Pixel> {
        let (r, c) = anchor;
        let a = self.at(anchor);
        let rows = r.saturating_sub(radius)..=(r + radius).min(self.h - 1);
        let mut scored: Vec<(f64, Pixel)> = rows
            .flat_map(|i| {
                let cols = c.saturating_sub(radius)..=(c + radius).min(self.w - 1);
                cols.map(move |j| (i, j))
            })
            .filter(|&px| px != anchor)
            .map(|px| (cosine_similarity(a, self.at(px), FEATURE_EPS), px))
            .collect();
        // stable: equal similarities keep row-major order
        scored.sort_by(|x, y| y.0.total_cmp(&x.0));
        scored.into_iter().take(n).map(|(_, px)| px).collect()
    }

    /// Scatters position-major gradients back to `[D, H, W]`.
    fn to_tensor<T: Real>(&self, grad: &[f64]) -> Result<Tensor<T>> {
        let plane = self.h * self.w;
        let mut out = vec![T::zero(); grad.len()];
        for p in 0..plane {
            for c in 0..self.dim {
                out[c * plane + p] = T::lit(grad[p * self.dim + c]);
            }
        }
        Tensor::new(vec![self.dim, self.h, self.w], out)
    }
}

/// The `n` positions in the square window of `radius` around `anchor` (the
/// anchor itself excluded, window clipped at the borders) whose vectors are
/// most cosine-similar to the anchor's. Ties keep row-major order; near a
/// border fewer than `n` positions may come back.
pub fn select_neighbors<T: Real>(
    map: &Tensor<T>,
    anchor: Pixel,
    n: usize,
    radius: usize,
) -> Result<Vec<Pixel>> {
    let v = Vectors::new(map)?;
    v.check(anchor)?;
    Ok(v.neighbors(anchor, n, radius))
}

/// `min(count, h * w)` distinct positions drawn uniformly from `rng`.
pub fn sample_anchors<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    count: usize,
    rng: &mut R,
) -> Vec<Pixel> {
    let n = h * w;
    rand::seq::index::sample(rng, n, count.min(n))
        .into_iter()
        .map(|i| (i / w, i % w))
        .collect()
}

fn congruent<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
) -> Result<(Vectors, Vectors)> {
    if student.shape() != teacher.shape() {
        return Err(shape_err!(
            "student features {:?} and teacher features {:?} differ",
            student.shape(),
            teacher.shape()
        ));
    }
    if anchors.is_empty() {
        return Err(shape_err!("contrastive loss needs at least one anchor"));
    }
    let s = Vectors::new(student)?;
    let t = Vectors::new(teacher)?;
    anchors.iter().try_for_each(|&a| s.check(a))?;
    Ok((s, t))
}

fn semantic_terms<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<(f64, Tensor<T>)> {
    let (s, t) = congruent(student, teacher, anchors)?;
    let pairs: Vec<Pixel> = anchors
        .iter()
        .flat_map(|&a| std::iter::once(a).chain(t.neighbors(a, cfg.n_pos_s, cfg.window_radius)))
        .collect();
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; s.data.len()];
    for &px in &pairs {
        let off = (px.0 * s.w + px.1) * s.dim;
        for (k, (a, b)) in s.at(px).iter().zip(t.at(px)).enumerate() {
            let d = a - b;
            loss += d * d;
            grad[off + k] += 2.0 * d * inv;
        }
    }
    Ok((loss * inv, s.to_tensor(&grad)?))
}

fn anatomy_terms<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<(f64, Tensor<T>)> {
    cfg.validate()?;
    let (s, t) = congruent(student, teacher, anchors)?;
    let inv_tau = 1.0 / cfg.tau;
    let inv_n = 1.0 / anchors.len() as f64;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = 0.0;
    let mut grad = vec![0.0; s.data.len()];
    for &a in anchors {
        let q = s.at(a);
        // keys[0] is the positive
        let keys: Vec<Pixel> = std::iter::once(a)
            .chain(t.neighbors(a, cfg.n_neg_a, cfg.window_radius))
            .collect();
        let logits: Vec<f64> = keys.iter().map(|&k| dot(q, t.at(k)) * inv_tau).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        loss += top + z.ln() - logits[0];
        let off = (a.0 * s.w + a.1) * s.dim;
        for (&k, l) in keys.iter().zip(&logits) {
            let p = (l - top).exp() / z;
            let coef = (p - if k == a { 1.0 } else { 0.0 }) * inv_tau * inv_n;
            for (g, &v) in grad[off..off + s.dim].iter_mut().zip(t.at(k)) {
                *g += coef * v;
            }
        }
    }
    Ok((loss * inv_n, s.to_tensor(&grad)?))
}

/// Semantic alignment: mean squared distance between student and teacher
/// vectors over every anchor and its `n_pos_s` most similar neighbours
/// (similarity measured on the teacher map).
pub fn semantic_loss<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<f64> {
    Ok(semantic_terms(student, teacher, anchors, cfg)?.0)
}

/// Anatomy InfoNCE: the same-position teacher vector is the positive and
/// the `n_neg_a` most similar teacher neighbours are the negatives. Mean
/// over anchors.
pub fn anatomy_infonce<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<f64> {
    Ok(anatomy_terms(student, teacher, anchors, cfg)?.0)
}

/// Loss whose gradient was already computed alongside its value.
struct Precomputed<T: Real> {
    name: &'static str,
    grad: Tensor<T>,
}

impl<T: Real> CustomOp<T> for Precomputed<T> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let s = grad_output.item();
        vec![Some(self.grad.map(|v| v * s))]
    }
}

fn record<T: Real>(
    g: &mut Graph<T>,
    student: Var,
    name: &'static str,
    (loss, grad): (f64, Tensor<T>),
) -> Result<Var> {
    let out = Tensor::scalar(T::lit(loss));
    g.custom(&[student], out, Box::new(Precomputed { name, grad }))
}

/// [`semantic_loss`] on the graph; the teacher map is a constant.
pub fn semantic_graph<T: Real>(
    g: &mut Graph<T>,
    student: Var,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    let terms = semantic_terms(g.value(student), teacher, anchors, cfg)?;
    record(g, student, "semantic_loss", terms)
}

/// [`anatomy_infonce`] on the graph; the teacher map is a constant.
pub fn anatomy_graph<T: Real>(
    g: &mut Graph<T>,
    student: Var,
    teacher: &Tensor<T>,
    anchors: &[Pixel],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    let terms = anatomy_terms(g.value(student), teacher, anchors, cfg)?;
    record(g, student, "anatomy_infonce", terms)
}
