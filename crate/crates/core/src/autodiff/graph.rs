use crate::error::{shape_err, Error, Result};
use crate::Real;

use super::conv::{
    add_bias, channel_sums, corr_forward, corr_input_adjoint, corr_kernel_grad, spatial_shape,
    ConvGeom,
};
use super::layers;
use super::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation implemented outside this module.
///
/// The caller computes the forward value; the graph stores it and calls
/// `backward` with the upstream gradient. Returned gradients are matched
/// positionally to the node's inputs; `None` means "no contribution".
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Upsample {
        x: Var,
        factor: usize,
        dims: usize,
    },
    Concat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    L2Normalize {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv",
            Op::ConvTranspose { .. } => "transposed_conv",
            Op::MaxPool { .. } => "max_pool",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Upsample { .. } => "linear_upsample",
            Op::Concat(..) => "concat",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order. A graph supports exactly one [`Graph::backward`];
/// build a fresh graph for the next step.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// Copies `v`'s value into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward's loss with respect to a trainable
    /// leaf. Leaves unreachable from the loss get zeros.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::Graph("graph already consumed by backward".into()));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{} output", op.name())));
        }
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    /// Cross-correlation of `[C_in, *spatial]` with `[C_out, C_in, *k]`.
    pub fn conv(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: &[usize],
        pad: &[usize],
        dims: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::forward(
            self.value(x).shape(),
            self.value(k).shape(),
            stride,
            pad,
            dims,
        )?;
        let mut y = corr_forward(self.value(x).data(), self.value(k).data(), &geom);
        if let Some(b) = b {
            self.check_bias(b, geom.out_ch)?;
            add_bias(&mut y, self.value(b).data());
        }
        let t = Tensor::from_raw(spatial_shape(geom.out_ch, geom.output, dims), y);
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push(t, Op::Conv { x, k, b, geom }, &inputs)
    }

    /// Transposed convolution with kernel `[C_in, C_out, *k]` and zero
    /// padding; the exact adjoint of [`Graph::conv`] with the same kernel.
    pub fn transposed_conv(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: &[usize],
        dims: usize,
    ) -> Result<Var> {
        let geom =
            ConvGeom::transposed(self.value(x).shape(), self.value(k).shape(), stride, dims)?;
        let mut y = corr_input_adjoint(self.value(x).data(), self.value(k).data(), &geom);
        if let Some(b) = b {
            self.check_bias(b, geom.in_ch)?;
            add_bias(&mut y, self.value(b).data());
        }
        let t = Tensor::from_raw(spatial_shape(geom.in_ch, geom.input, dims), y);
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push(t, Op::ConvTranspose { x, k, b, geom }, &inputs)
    }

    fn check_bias(&self, b: Var, ch: usize) -> Result<()> {
        if self.value(b).shape() != [ch] {
            return Err(shape_err!(
                "bias must be [{ch}], got {:?}",
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn max_pool(&mut self, x: Var, window: &[usize], dims: usize) -> Result<Var> {
        let p = layers::max_pool(self.value(x).data(), self.value(x).shape(), window, dims)?;
        let t = Tensor::from_raw(p.shape, p.values);
        self.push(
            t,
            Op::MaxPool {
                x,
                argmax: p.argmax,
            },
            &[x],
        )
    }

    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var, eps: T) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = layers::instance_norm(
            self.value(x).data(),
            shape[0],
            self.value(gain).data(),
            self.value(shift).data(),
            eps,
        )?;
        let t = Tensor::from_raw(shape, n.values);
        self.push(
            t,
            Op::InstanceNorm {
                x,
                gain,
                shift,
                xhat: n.xhat,
                inv_std: n.inv_std,
            },
            &[x, gain, shift],
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::Config(format!(
                "leaky relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let t = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(t, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Linear (bi/trilinear) upsampling, half-pixel centers.
    pub fn linear_upsample(&mut self, x: Var, factor: usize, dims: usize) -> Result<Var> {
        let (shape, y) =
            layers::upsample(self.value(x).data(), self.value(x).shape(), factor, dims)?;
        self.push(
            Tensor::from_raw(shape, y),
            Op::Upsample { x, factor, dims },
            &[x],
        )
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa[1..] != sb[1..] {
            return Err(shape_err!(
                "concat: spatial shapes {sa:?} and {sb:?} differ"
            ));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        self.push(Tensor::from_raw(shape, data), Op::Concat(a, b), &[a, b])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_raw(self.value(a).shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|v| v + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| v.abs());
        self.push(t, Op::Abs(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        self.push(t, Op::Mean(a), &[a])
    }

    /// Divides every spatial position's channel vector by
    /// `max(norm, eps)`.
    pub fn l2_normalize_channels(&mut self, x: Var, eps: T) -> Result<Var> {
        let v = self.value(x);
        let ch = v.shape()[0];
        let per = v.len() / ch;
        let d = v.data();
        let norms: Vec<T> = (0..per)
            .map(|p| {
                (0..ch)
                    .map(|c| d[c * per + p] * d[c * per + p])
                    .sum::<T>()
                    .sqrt()
            })
            .collect();
        let mut y = d.to_vec();
        for c in 0..ch {
            for p in 0..per {
                y[c * per + p] = y[c * per + p] / norms[p].max(eps);
            }
        }
        let t = Tensor::from_raw(v.shape().to_vec(), y);
        self.push(t, Op::L2Normalize { x, norms, eps }, &[x])
    }

    /// Records an externally computed operation.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var> {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph(
                "backward called twice on the same graph".into(),
            ));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let contribs = self.local_grads(idx, &gy);
            for (v, g) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {}",
                        self.nodes[idx].op.name()
                    )));
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.accumulate(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let is_leaf = matches!(node.op, Op::Leaf);
            if !(is_leaf && node.requires_grad) {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, idx: usize, gy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        let like = |v: Var, data: Vec<T>| Tensor::from_raw(self.value(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, k, b, geom } => {
                if self.wants(*x) {
                    out.push((
                        *x,
                        like(
                            *x,
                            corr_input_adjoint(gy.data(), self.value(*k).data(), geom),
                        ),
                    ));
                }
                if self.wants(*k) {
                    out.push((
                        *k,
                        like(*k, corr_kernel_grad(self.value(*x).data(), gy.data(), geom)),
                    ));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    out.push((b, like(b, channel_sums(gy.data(), geom.out_ch))));
                }
            }
            Op::ConvTranspose { x, k, b, geom } => {
                if self.wants(*x) {
                    out.push((
                        *x,
                        like(*x, corr_forward(gy.data(), self.value(*k).data(), geom)),
                    ));
                }
                if self.wants(*k) {
                    out.push((
                        *k,
                        like(*k, corr_kernel_grad(gy.data(), self.value(*x).data(), geom)),
                    ));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    out.push((b, like(b, channel_sums(gy.data(), geom.in_ch))));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut g = vec![T::zero(); self.value(*x).len()];
                for (&i, &v) in argmax.iter().zip(gy.data()) {
                    g[i] = g[i] + v;
                }
                out.push((*x, like(*x, g)));
            }
            Op::InstanceNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (dx, dg, ds) = layers::instance_norm_backward(
                    gy.data(),
                    xhat,
                    inv_std,
                    self.value(*gain).data(),
                );
                out.push((*x, like(*x, dx)));
                out.push((*gain, like(*gain, dg)));
                out.push((*shift, like(*shift, ds)));
            }
            Op::LeakyRelu { x, slope } => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { *slope * g })
                    .collect();
                out.push((*x, like(*x, g)));
            }
            Op::Upsample { x, factor, dims } => {
                let g =
                    layers::upsample_backward(gy.data(), self.value(*x).shape(), *factor, *dims);
                out.push((*x, like(*x, g)));
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                out.push((*a, like(*a, gy.data()[..na].to_vec())));
                out.push((*b, like(*b, gy.data()[na..].to_vec())));
            }
            Op::Add(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                let ga = self.zip_with(gy, *b, |g, v| g * v);
                let gb = self.zip_with(gy, *a, |g, v| g * v);
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Scale(a, c) => out.push((*a, gy.map(|g| g * *c))),
            Op::AddScalar(a) => out.push((*a, gy.clone())),
            Op::Square(a) => {
                let two = T::lit(2.0);
                out.push((*a, self.zip_with(gy, *a, |g, v| two * v * g)));
            }
            Op::Abs(a) => {
                out.push((
                    *a,
                    self.zip_with(gy, *a, |g, v| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    }),
                ));
            }
            Op::Sum(a) => out.push((*a, Tensor::full(self.value(*a).shape(), gy.item()))),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).len() as f64);
                out.push((*a, Tensor::full(self.value(*a).shape(), gy.item() / n)));
            }
            Op::L2Normalize { x, norms, eps } => {
                let y = &node.value;
                let ch = y.shape()[0];
                let per = y.len() / ch;
                let (yd, gd) = (y.data(), gy.data());
                let mut g = vec![T::zero(); y.len()];
                for p in 0..per {
                    let n = norms[p];
                    if n > *eps {
                        let proj: T = (0..ch).map(|c| yd[c * per + p] * gd[c * per + p]).sum();
                        for c in 0..ch {
                            let i = c * per + p;
                            g[i] = (gd[i] - yd[i] * proj) / n;
                        }
                    } else {
                        for c in 0..ch {
                            let i = c * per + p;
                            g[i] = gd[i] / *eps;
                        }
                    }
                }
                out.push((*x, like(*x, g)));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                for (v, g) in inputs.iter().zip(op.backward(&vals, &node.value, gy)) {
                    if let Some(g) = g {
                        out.push((*v, g));
                    }
                }
            }
        }
        out
    }

    fn zip_with(&self, gy: &Tensor<T>, v: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = gy
            .data()
            .iter()
            .zip(self.value(v).data())
            .map(|(&g, &x)| f(g, x))
            .collect();
        Tensor::from_raw(gy.shape().to_vec(), data)
    }
}
