#![allow(dead_code)]

pub mod oracles;

use orthoct_core::autodiff::{Graph, Tensor, Var};
use orthoct_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds a scalar loss from the given inputs, each inserted as a
/// trainable leaf.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

pub fn eval(f: &LossFn, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = f(&mut g, &vars).unwrap();
    g.value(l).item()
}

pub fn analytic(f: &LossFn, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = f(&mut g, &vars).unwrap();
    g.backward(l).unwrap();
    vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect()
}

/// Central finite differences, independent of the tape.
pub fn numeric(f: &LossFn, inputs: &[Tensor<f64>], h: f64) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let g = (0..input.len())
            .map(|j| {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= h;
                (eval(f, &plus) - eval(f, &minus)) / (2.0 * h)
            })
            .collect();
        out.push(Tensor::new(input.shape().to_vec(), g).unwrap());
    }
    out
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over all inputs together.
pub fn rel_err(a: &[Tensor<f64>], n: &[Tensor<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (x, y) in a.iter().zip(n) {
        for (&p, &q) in x.data().iter().zip(y.data()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nn += q * q;
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale < 1e-300 {
        return diff.sqrt();
    }
    diff.sqrt() / scale
}

pub fn grad_check(f: &LossFn, inputs: &[Tensor<f64>]) -> f64 {
    rel_err(&analytic(f, inputs), &numeric(f, inputs, 1e-4))
}

/// Weighted sum with fixed random weights, turning any tensor output into a
/// scalar with a non-degenerate gradient.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = random_tensor(&mut rng(seed ^ 0xabcdef), &shape);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}
