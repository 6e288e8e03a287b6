use super::backend::{clamp01, sigmoid, Backend};
use super::kernels::{self, Axis};
use super::scalar::Element;
use super::tensor::{Shape, Tensor};
use crate::error::{arg_err, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Clamp01(Var),
    Square(Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Mean(Var),
    Sum(Var),
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Resize(Var),
    MaxPool2(Var, Vec<u32>),
    BlurValid(Var, Vec<f64>),
    ForwardDiff(Var, Axis),
    Detach,
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Clamp01(_) => "clamp01",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Concat(_) => "concat_channels",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::PixelUnshuffle(..) => "pixel_unshuffle",
            Op::PixelShuffle(..) => "pixel_shuffle",
            Op::Resize(_) => "resize_bilinear",
            Op::MaxPool2(..) => "max_pool2",
            Op::BlurValid(..) => "blur_valid",
            Op::ForwardDiff(..) => "forward_diff",
            Op::Detach => "detach",
        }
    }
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so iterating the tape backwards is
/// a reverse topological order and each node is visited exactly once.
#[derive(Debug, Default)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Kinds of every recorded operation, in tape order.
    pub fn op_kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes.iter().map(|n| n.op.kind())
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = kernels::map(&self.nodes[x.0].value, f);
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// multiple uses of the same value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.nodes[loss.0].value.shape();
        if !ls.is_scalar() {
            return Err(arg_err!("backward needs a scalar loss, got shape {ls:?}"));
        }
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.grads, loss.0, Tensor::full(ls, T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor<T>| {
            if nodes[v.0].requires_grad {
                accumulate(grads, v.0, t);
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf | Op::Detach => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let bias_shape = b.map(|b| val(b).shape());
                let need = (needs(*x), needs(*w), b.is_some_and(needs));
                let gr = kernels::conv2d_backward(val(*x), val(*w), bias_shape, g, *stride, *pad, need);
                if let Some(dx) = gr.dx {
                    send(*x, dx);
                }
                if let Some(dw) = gr.dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, gr.db) {
                    send(*b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let bias_shape = b.map(|b| val(b).shape());
                let need = (needs(*x), needs(*w), b.is_some_and(needs));
                let gr = kernels::linear_backward(val(*x), val(*w), bias_shape, g, need);
                if let Some(dx) = gr.dx {
                    send(*x, dx);
                }
                if let Some(dw) = gr.dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, gr.db) {
                    send(*b, db);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::of(*slope);
                let d = kernels::zip_map(g, val(*x), |g, x| if x > T::zero() { g } else { g * s });
                send(*x, d);
            }
            Op::Tanh(x) => {
                let d = kernels::zip_map(g, out, |g, y| g * (T::one() - y * y));
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = kernels::zip_map(g, out, |g, y| g * y * (T::one() - y));
                send(*x, d);
            }
            Op::Clamp01(x) => {
                let d = kernels::zip_map(
                    g,
                    val(*x),
                    |g, x| {
                        if x >= T::zero() && x <= T::one() {
                            g
                        } else {
                            T::zero()
                        }
                    },
                );
                send(*x, d);
            }
            Op::Square(x) => {
                let two = T::of(2.0);
                let d = kernels::zip_map(g, val(*x), |g, x| two * x * g);
                send(*x, d);
            }
            Op::Abs(x) => {
                let d = kernels::zip_map(g, val(*x), |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                send(*x, d);
            }
            Op::Scale(x, c) => {
                let c = T::of(*c);
                send(*x, kernels::map(g, |g| g * c));
            }
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Add(a, b) => {
                if needs(*a) {
                    send(*a, kernels::reduce_to(g, val(*a).shape()));
                }
                if needs(*b) {
                    send(*b, kernels::reduce_to(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    send(*a, kernels::reduce_to(g, val(*a).shape()));
                }
                if needs(*b) {
                    let neg = kernels::map(g, |v| -v);
                    send(*b, kernels::reduce_to(&neg, val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = kernels::broadcast_map(g, val(*b), |g, b| g * b).expect("mul grad");
                    send(*a, kernels::reduce_to(&d, val(*a).shape()));
                }
                if needs(*b) {
                    let d = kernels::broadcast_map(g, val(*a), |g, a| g * a).expect("mul grad");
                    send(*b, kernels::reduce_to(&d, val(*b).shape()));
                }
            }
            Op::Div(a, b) => {
                if needs(*a) {
                    let d = kernels::broadcast_map(g, val(*b), |g, b| g / b).expect("div grad");
                    send(*a, kernels::reduce_to(&d, val(*a).shape()));
                }
                if needs(*b) {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let q = kernels::broadcast_map(out, val(*b), |o, b| o / b).expect("div grad");
                    let d = kernels::zip_map(g, &q, |g, q| -g * q);
                    send(*b, kernels::reduce_to(&d, val(*b).shape()));
                }
            }
            Op::Concat(parts) => {
                let chans: Vec<usize> = parts.iter().map(|p| val(*p).shape().c).collect();
                for (p, d) in parts.iter().zip(kernels::split_channels(g, &chans)) {
                    send(*p, d);
                }
            }
            Op::GlobalAvgPool(x) => {
                send(*x, kernels::global_avg_pool_backward(g, val(*x).shape()));
            }
            Op::Mean(x) => {
                let s = val(*x).shape();
                let v = g.item() * T::of(1.0 / s.numel() as f64);
                send(*x, Tensor::full(s, v));
            }
            Op::Sum(x) => send(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::PixelUnshuffle(x, r) => {
                send(*x, kernels::pixel_shuffle(g, *r).expect("inverse shuffle"));
            }
            Op::PixelShuffle(x, r) => {
                send(*x, kernels::pixel_unshuffle(g, *r).expect("inverse shuffle"));
            }
            Op::Resize(x) => send(*x, kernels::resize_bilinear_backward(g, val(*x).shape())),
            Op::MaxPool2(x, arg) => send(*x, kernels::max_pool2_backward(g, val(*x).shape(), arg)),
            Op::BlurValid(x, k) => send(*x, kernels::blur_valid_backward(g, val(*x).shape(), k)),
            Op::ForwardDiff(x, axis) => {
                send(*x, kernels::forward_diff_backward(g, val(*x).shape(), *axis));
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], i: usize, t: Tensor<T>) {
    match &mut grads[i] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

impl<T: Element> Backend for Graph<T> {
    type V = Var;

    fn shape(&self, v: &Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn parameter(&mut self, t: &Tensor<f32>, trainable: bool) -> Var {
        self.leaf(t.cast(), trainable)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = kernels::conv2d(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
            stride,
            pad,
        )?;
        let mut deps = vec![*x, *w];
        deps.extend(b.copied());
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: *x,
                w: *w,
                b: b.copied(),
                stride,
                pad,
            },
            rg,
        ))
    }

    fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let value = kernels::linear(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
        )?;
        let mut deps = vec![*x, *w];
        deps.extend(b.copied());
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Linear {
                x: *x,
                w: *w,
                b: b.copied(),
            },
            rg,
        ))
    }

    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(*x, Op::LeakyRelu(*x, slope), |v| if v > T::zero() { v } else { v * s })
    }

    fn tanh(&mut self, x: &Var) -> Var {
        self.unary(*x, Op::Tanh(*x), |v| v.tanh())
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.unary(*x, Op::Sigmoid(*x), sigmoid)
    }

    fn clamp01(&mut self, x: &Var) -> Var {
        self.unary(*x, Op::Clamp01(*x), clamp01)
    }

    fn square(&mut self, x: &Var) -> Var {
        self.unary(*x, Op::Square(*x), |v| v * v)
    }

    fn abs(&mut self, x: &Var) -> Var {
        self.unary(*x, Op::Abs(*x), |v| v.abs())
    }

    fn scale(&mut self, x: &Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(*x, Op::Scale(*x, c), |v| v * ct)
    }

    fn add_scalar(&mut self, x: &Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(*x, Op::AddScalar(*x), |v| v + ct)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = kernels::broadcast_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y)?;
        let rg = self.any_grad(&[*a, *b]);
        Ok(self.push(value, Op::Add(*a, *b), rg))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = kernels::broadcast_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y)?;
        let rg = self.any_grad(&[*a, *b]);
        Ok(self.push(value, Op::Sub(*a, *b), rg))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = kernels::broadcast_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y)?;
        let rg = self.any_grad(&[*a, *b]);
        Ok(self.push(value, Op::Mul(*a, *b), rg))
    }

    fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = kernels::broadcast_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x / y)?;
        let rg = self.any_grad(&[*a, *b]);
        Ok(self.push(value, Op::Div(*a, *b), rg))
    }

    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = kernels::concat_channels(&refs)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Var {
        let value = kernels::global_avg_pool(&self.nodes[x.0].value);
        let rg = self.any_grad(&[*x]);
        self.push(value, Op::GlobalAvgPool(*x), rg)
    }

    fn mean(&mut self, x: &Var) -> Var {
        let value = kernels::mean_all(&self.nodes[x.0].value);
        let rg = self.any_grad(&[*x]);
        self.push(value, Op::Mean(*x), rg)
    }

    fn sum(&mut self, x: &Var) -> Var {
        let value = kernels::sum_all(&self.nodes[x.0].value);
        let rg = self.any_grad(&[*x]);
        self.push(value, Op::Sum(*x), rg)
    }

    fn pixel_unshuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_unshuffle(&self.nodes[x.0].value, r)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::PixelUnshuffle(*x, r), rg))
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_shuffle(&self.nodes[x.0].value, r)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::PixelShuffle(*x, r), rg))
    }

    fn resize_bilinear(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let value = kernels::resize_bilinear(&self.nodes[x.0].value, h, w)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::Resize(*x), rg))
    }

    fn max_pool2(&mut self, x: &Var) -> Result<Var> {
        let (value, arg) = kernels::max_pool2(&self.nodes[x.0].value)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::MaxPool2(*x, arg), rg))
    }

    fn blur_valid(&mut self, x: &Var, kernel: &[f64]) -> Result<Var> {
        let value = kernels::blur_valid(&self.nodes[x.0].value, kernel)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::BlurValid(*x, kernel.to_vec()), rg))
    }

    fn forward_diff(&mut self, x: &Var, axis: Axis) -> Result<Var> {
        let value = kernels::forward_diff(&self.nodes[x.0].value, axis)?;
        let rg = self.any_grad(&[*x]);
        Ok(self.push(value, Op::ForwardDiff(*x, axis), rg))
    }

    fn detach(&mut self, x: &Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Detach, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_is_reciprocal_count() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(Shape::new(1, 2, 2, 2), 0.3), true);
        let m = g.mean(&x);
        g.backward(m).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|v| (*v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let sq = g.mul(&x, &x).unwrap();
        let s = g.sum(&sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn fan_out_accumulates_both_branches() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let a = g.scale(&x, 3.0);
        let b = g.square(&x);
        let s = g.add(&a, &b).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0 + 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0), false);
        let w = g.leaf(Tensor::scalar(5.0), true);
        let y = g.mul(&x, &w).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap().item(), 2.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let d = g.detach(&x);
        let y = g.mul(&d, &x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn relu_gradient_at_negative_input_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(-1.0), true);
        let y = g.relu(&x);
        assert_eq!(g.value(y).item(), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.0);
    }
}
