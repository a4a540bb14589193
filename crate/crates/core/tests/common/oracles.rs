//! Independent reference implementations shared by the test targets.

use orthoct_core::autodiff::{Graph, Tensor, Var};
use orthoct_core::geometry::Volume;
use orthoct_core::losses::{ContrastiveConfig, Pixel};
use orthoct_core::networks::{Bound, Grads, NetworkParams};
use orthoct_core::Result;

use super::{project, rel_err};

/// Unit-normalizes every spatial vector of a `[D, H, W]` map.
pub fn unit_map(t: &Tensor<f64>) -> Tensor<f64> {
    let (d, plane) = (t.shape()[0], t.len() / t.shape()[0]);
    let mut out = t.data().to_vec();
    for p in 0..plane {
        let n: f64 = (0..d)
            .map(|c| out[c * plane + p].powi(2))
            .sum::<f64>()
            .sqrt();
        for c in 0..d {
            out[c * plane + p] /= n;
        }
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

pub fn map_from_vectors(h: usize, w: usize, vecs: &[Vec<f64>]) -> Tensor<f64> {
    let d = vecs[0].len();
    let plane = h * w;
    let mut data = vec![0.0; d * plane];
    for (p, v) in vecs.iter().enumerate() {
        for c in 0..d {
            data[c * plane + p] = v[c];
        }
    }
    Tensor::new(vec![d, h, w], data).unwrap()
}

pub fn vec_at(t: &Tensor<f64>, r: usize, c: usize) -> Vec<f64> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    (0..t.shape()[0])
        .map(|k| t.data()[k * h * w + r * w + c])
        .collect()
}

/// Brute-force oracle: every in-window position scored and fully sorted by
/// (-similarity, row, col).
pub fn neighbors_oracle(t: &Tensor<f64>, anchor: Pixel, n: usize, radius: usize) -> Vec<Pixel> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let a = vec_at(t, anchor.0, anchor.1);
    let mut all = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let dr = r.abs_diff(anchor.0);
            let dc = c.abs_diff(anchor.1);
            if dr > radius || dc > radius || (r, c) == anchor {
                continue;
            }
            let b = vec_at(t, r, c);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            all.push((dot / (na * nb), r, c));
        }
    }
    all.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    all.into_iter().take(n).map(|(_, r, c)| (r, c)).collect()
}

/// Independent semantic oracle: positive sets enumerated via the
/// brute-force neighbour sort, flat mean of squared distances.
pub fn semantic_oracle(
    s: &Tensor<f64>,
    t: &Tensor<f64>,
    anchors: &[Pixel],
    c: &ContrastiveConfig,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &a in anchors {
        let mut pos = vec![a];
        pos.extend(neighbors_oracle(t, a, c.n_pos_s, c.window_radius));
        for p in pos {
            let d: f64 = vec_at(s, p.0, p.1)
                .iter()
                .zip(vec_at(t, p.0, p.1))
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            total += d;
            count += 1;
        }
    }
    total / count as f64
}

/// Independent InfoNCE oracle with its own stabilized log-sum-exp.
pub fn anatomy_oracle(
    s: &Tensor<f64>,
    t: &Tensor<f64>,
    anchors: &[Pixel],
    c: &ContrastiveConfig,
) -> f64 {
    let mut total = 0.0;
    for &a in anchors {
        let q = vec_at(s, a.0, a.1);
        let logit = |p: Pixel| -> f64 {
            q.iter()
                .zip(vec_at(t, p.0, p.1))
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / c.tau
        };
        let pos = logit(a);
        let negs: Vec<f64> = neighbors_oracle(t, a, c.n_neg_a, c.window_radius)
            .into_iter()
            .map(logit)
            .collect();
        let m = negs.iter().fold(pos, |m, &v| m.max(v));
        let z = (pos - m).exp() + negs.iter().map(|v| (v - m).exp()).sum::<f64>();
        total += -(pos - m - z.ln());
    }
    total / anchors.len() as f64
}

/// Direct windowed SSIM: explicit 11×11 Gaussian weights at every fully
/// covered position, no separable filtering.
pub fn ssim_oracle(a: &Volume<f64>, b: &Volume<f64>) -> f64 {
    let [nx, ny, nz] = a.dims;
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
        .collect();
    let gs: f64 = g.iter().sum();
    let c1 = (0.01f64 * 2000.0).powi(2);
    let c2 = (0.03f64 * 2000.0).powi(2);
    let mut total = 0.0;
    for z in 0..nz {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=ny - 11 {
            for x0 in 0..=nx - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let w = g[i] * g[j] / (gs * gs);
                        let p = a.get(x0 + i, y0 + j, z);
                        let q = b.get(x0 + i, y0 + j, z);
                        mx += w * p;
                        my += w * q;
                        sxx += w * p * p;
                        syy += w * q * q;
                        sxy += w * p * q;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / nz as f64
}

/// Scalarized network output: fixed random weighting of every output value.
pub fn scalar_output(
    params: &NetworkParams<f64>,
    run: &dyn Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    seed: u64,
) -> (f64, Grads<f64>) {
    let mut g = Graph::new();
    let b = params.bind(&mut g, true);
    let y = run(&mut g, &b).unwrap();
    let l = project(&mut g, y, seed).unwrap();
    let v = g.value(l).item();
    g.backward(l).unwrap();
    (v, b.grads(&g).unwrap())
}

/// Analytic and central-difference gradients, with step `h`, of a handful
/// of sampled parameter entries.
pub fn sampled_param_grads(
    params: &NetworkParams<f64>,
    run: &dyn Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    picks: &[(&str, usize)],
    seed: u64,
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (_, grads) = scalar_output(params, run, seed);
    let mut a = Vec::new();
    let mut n = Vec::new();
    for &(name, idx) in picks {
        let idx = idx % params.get(name).unwrap().len();
        a.push(grads[name].data()[idx]);
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[idx] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[idx] -= h;
        let fp = scalar_output(&plus, run, seed).0;
        let fm = scalar_output(&minus, run, seed).0;
        n.push((fp - fm) / (2.0 * h));
    }
    (a, n)
}

/// Relative error of analytic vs central-difference gradients on a handful
/// of sampled parameter entries.
pub fn sampled_param_check(
    params: &NetworkParams<f64>,
    run: &dyn Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    picks: &[(&str, usize)],
    seed: u64,
) -> f64 {
    let (a, n) = sampled_param_grads(params, run, picks, seed, 1e-4);
    let a = Tensor::new(vec![a.len()], a).unwrap();
    let n = Tensor::new(vec![n.len()], n).unwrap();
    rel_err(&[a], &[n])
}
