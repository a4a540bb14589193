use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::Real;

/// Named parameter tensors of one network, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Gradients keyed by parameter name.
pub type Grads<T> = BTreeMap<String, Tensor<T>>;

impl<T: Real> NetworkParams<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_same_layout<U: Real>(&self, other: &NetworkParams<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ParamMismatch(format!(
                "{} vs {} parameters",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.tensors.iter().zip(other.iter()) {
            if na != nb {
                return Err(Error::ParamMismatch(format!("{na} vs {nb}")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{na}: shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Places every tensor on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Sum of squared differences to `other` (same layout assumed).
    pub fn distance_sq(&self, other: &Self) -> f64 {
        self.tensors
            .values()
            .zip(other.tensors.values())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
            .sum()
    }
}

/// Graph handles for a bound [`NetworkParams`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    /// Reads the gradient of every bound parameter after a backward pass.
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> Result<Grads<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                g.grad(v)
                    .cloned()
                    .map(|t| (k.clone(), t))
                    .ok_or_else(|| Error::Graph(format!("no gradient for {k}")))
            })
            .collect()
    }
}

/// Accumulates `scale * src` into `acc`, creating entries on first use.
pub fn accumulate_grads<T: Real>(acc: &mut Grads<T>, src: &Grads<T>, scale: T) {
    for (k, g) in src {
        match acc.get_mut(k) {
            Some(a) => a.axpy(scale, g),
            None => {
                acc.insert(k.clone(), g.map(|v| v * scale));
            }
        }
    }
}

/// Deterministic parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Kaiming-style normal with standard deviation `sqrt(2 / fan_in)`.
    pub fn kaiming<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        Tensor::from_raw(shape.to_vec(), data)
    }
}
