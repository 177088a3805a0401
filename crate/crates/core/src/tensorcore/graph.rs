//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards is a valid
//! topological order for the reverse sweep.

use super::ops::{self, Conv2dOptions};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    BilinearResize(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    GlobalAvgPool(Var),
    ChannelNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Sum(Var),
    Scale(Var, T),
    BceWithLogits {
        logits: Var,
        target: Tensor<T>,
        pos_weight: T,
        scale: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BilinearResize(_) => "bilinear_resize",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::ChannelNorm { .. } => "channel_norm",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

/// Names of every differentiable operation a [`Graph`] can record.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "bilinear_resize",
    "add",
    "mul",
    "sigmoid",
    "tanh",
    "relu",
    "concat",
    "narrow",
    "global_avg_pool",
    "channel_norm",
    "sum",
    "scale",
    "bce_with_logits",
];

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records operations on tensors and computes gradients of a scalar output
/// with respect to every leaf created with `requires_grad`.
///
/// Gradients accumulate across calls to [`Graph::backward`]; calling it twice
/// on the same loss doubles every leaf gradient. Use [`Graph::zero_grad`] to
/// reset.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Fail any operation whose output contains NaN or infinity.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            opts,
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                opts,
            },
            &parents,
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv_transpose2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &parents,
        )
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_resize(self.value(input), out_h, out_w)?;
        self.push(out, Op::BilinearResize(input), &[input])
    }

    /// Elementwise sum with same-rank broadcasting over extents of 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::binary_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product with same-rank broadcasting over extents of 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::binary_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(ops::sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&parts, axis)?;
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow(axis, start, len)?;
        self.push(out, Op::Narrow { input, axis, start }, &[input])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        self.push(out, Op::GlobalAvgPool(x), &[x])
    }

    /// Per-sample, per-channel normalization over H,W with affine `gamma`/`beta`.
    pub fn channel_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let eps = T::from_f64_lossy(CHANNEL_NORM_EPS);
        let (out, xhat, inv_std) = ops::channel_norm(self.value(input), self.value(gamma), self.value(beta), eps)?;
        self.push(
            out,
            Op::ChannelNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[input, gamma, beta],
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k), &[x])
    }

    /// `scale · Σ [w·y·softplus(-z) + (1-y)·softplus(z)]` over all elements.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor<T>, pos_weight: T, scale: T) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {:?} vs target {:?}", z.shape(), target.shape()),
            ));
        }
        let total: T = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&zi, &yi)| ops::bce_with_logits_elem(zi, yi, pos_weight))
            .sum();
        let out = Tensor::scalar(total * scale);
        self.push(
            out,
            Op::BceWithLogits {
                logits,
                target,
                pos_weight,
                scale,
            },
            &[logits],
        )
    }

    /// Accumulate d(loss)/d(leaf) into every reachable leaf with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each parent.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                opts,
            } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(*input), val(*weight), bias.is_some(), *opts, g)?;
                out.push((*input, gx));
                out.push((*weight, gw));
                if let (Some(b), Some(gb)) = (bias, gb) {
                    out.push((*b, gb));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (gx, gw, gb) =
                    ops::conv_transpose2d_backward(val(*input), val(*weight), bias.is_some(), *stride, *padding, g)?;
                out.push((*input, gx));
                out.push((*weight, gw));
                if let (Some(b), Some(gb)) = (bias, gb) {
                    out.push((*b, gb));
                }
            }
            Op::BilinearResize(x) => {
                out.push((*x, ops::bilinear_resize_backward(val(*x).shape(), g)?));
            }
            Op::Add(a, b) => {
                out.push((*a, ops::reduce_to_shape(g, val(*a).shape())?));
                out.push((*b, ops::reduce_to_shape(g, val(*b).shape())?));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    let full = ops::binary_broadcast("mul", g, &ops::expand_to(vb, g.shape())?, |x, y| x * y)?;
                    out.push((*a, ops::reduce_to_shape(&full, va.shape())?));
                }
                if self.nodes[b.0].requires_grad {
                    let full = ops::binary_broadcast("mul", g, &ops::expand_to(va, g.shape())?, |x, y| x * y)?;
                    out.push((*b, ops::reduce_to_shape(&full, vb.shape())?));
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let d = ops::binary_broadcast("sigmoid", g, y, |g, y| g * y * (T::one() - y))?;
                out.push((*x, d));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let d = ops::binary_broadcast("tanh", g, y, |g, y| g * (T::one() - y * y))?;
                out.push((*x, d));
            }
            Op::Relu(x) => {
                let d = ops::binary_broadcast("relu", g, val(*x), |g, x| if x > T::zero() { g } else { T::zero() })?;
                out.push((*x, d));
            }
            Op::Concat { inputs, axis } => {
                let mut start = 0;
                for &v in inputs {
                    let len = val(v).shape()[*axis];
                    out.push((v, g.narrow(*axis, start, len)?));
                    start += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let shape = val(*input).shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let (extent, len) = (shape[*axis], g.shape()[*axis]);
                let mut full = vec![T::zero(); val(*input).numel()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    full[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*input, Tensor::new(shape, full)?));
            }
            Op::GlobalAvgPool(x) => {
                let shape = val(*x).shape();
                let plane = shape[2] * shape[3];
                let k = T::one() / T::from_usize(plane).expect("extent");
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v * k, plane)).collect();
                out.push((*x, Tensor::new(shape, data)?));
            }
            Op::ChannelNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (gx, gg, gb) = ops::channel_norm_backward(val(*gamma), xhat, inv_std, g)?;
                out.push((*input, gx));
                out.push((*gamma, gg));
                out.push((*beta, gb));
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
            }
            Op::Scale(x, k) => {
                out.push((*x, g.map(|v| v * *k)));
            }
            Op::BceWithLogits {
                logits,
                target,
                pos_weight,
                scale,
            } => {
                let k = g.data()[0] * *scale;
                let z = val(*logits);
                let data = z
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&zi, &yi)| k * ops::bce_with_logits_grad(zi, yi, *pos_weight))
                    .collect();
                out.push((*logits, Tensor::new(z.shape(), data)?));
            }
        }
        Ok(out)
    }
}

/// Variance floor of [`Graph::channel_norm`].
pub const CHANNEL_NORM_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_and_accumulation() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::<f32>::new();
        let c = g.constant(Tensor::ones(&[2]));
        let x = g.param(Tensor::ones(&[2]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn finite_checks_flag_overflow() {
        let mut g = Graph::<f32>::new().with_finite_checks(true);
        let x = g.param(Tensor::scalar(f32::MAX));
        let err = g.add(x, x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "add" }));
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::<f32>::new();
        let z = g.constant(Tensor::zeros(&[1]));
        let s = g.sigmoid(z).unwrap();
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);
        assert_eq!(g.value(t).data(), &[0.0]);
    }
}
