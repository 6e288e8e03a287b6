use std::rc::Rc;

use super::kernels::{self, Axis};
use super::scalar::Element;
use super::tensor::{Shape, Tensor};
use crate::error::{arg_err, Result};

/// Operator set the networks and losses are written against.
///
/// Three implementations exist: [`Eager`] evaluates immediately and frees
/// intermediates as soon as they go out of scope (inference), the taped
/// [`Graph`](super::Graph) records everything for reverse-mode
/// differentiation (training, gradient checks), and the analytic FLOP
/// counter in `evalkit` only propagates shapes.
pub trait Backend {
    type V: Clone;

    fn shape(&self, v: &Self::V) -> Shape;

    /// Lifts stored weights into the backend. `trainable` marks values the
    /// caller wants gradients for.
    fn parameter(&mut self, t: &Tensor<f32>, trainable: bool) -> Self::V;

    fn constant(&mut self, t: &Tensor<f32>) -> Self::V {
        self.parameter(t, false)
    }

    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, stride: usize, pad: usize) -> Result<Self::V>;
    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V>;

    fn leaky_relu(&mut self, x: &Self::V, slope: f64) -> Self::V;
    fn relu(&mut self, x: &Self::V) -> Self::V {
        self.leaky_relu(x, 0.0)
    }
    fn tanh(&mut self, x: &Self::V) -> Self::V;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    /// Clamp to [0, 1]; zero gradient outside the interval.
    fn clamp01(&mut self, x: &Self::V) -> Self::V;
    fn square(&mut self, x: &Self::V) -> Self::V;
    fn abs(&mut self, x: &Self::V) -> Self::V;
    fn scale(&mut self, x: &Self::V, c: f64) -> Self::V;
    fn add_scalar(&mut self, x: &Self::V, c: f64) -> Self::V;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;

    fn concat_channels(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn global_avg_pool(&mut self, x: &Self::V) -> Self::V;
    /// Mean of every element, as a 1×1×1×1 tensor.
    fn mean(&mut self, x: &Self::V) -> Self::V;
    fn sum(&mut self, x: &Self::V) -> Self::V;

    fn pixel_unshuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V>;
    fn pixel_shuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V>;
    fn resize_bilinear(&mut self, x: &Self::V, h: usize, w: usize) -> Result<Self::V>;
    fn upsample_bilinear(&mut self, x: &Self::V, scale: usize) -> Result<Self::V> {
        if scale == 0 {
            return Err(arg_err!("upsample scale must be at least 1"));
        }
        let s = self.shape(x);
        self.resize_bilinear(x, s.h * scale, s.w * scale)
    }
    fn max_pool2(&mut self, x: &Self::V) -> Result<Self::V>;
    fn blur_valid(&mut self, x: &Self::V, kernel: &[f64]) -> Result<Self::V>;
    fn forward_diff(&mut self, x: &Self::V, axis: Axis) -> Result<Self::V>;

    /// Same value, cut off from gradient flow.
    fn detach(&mut self, x: &Self::V) -> Self::V;

    /// Attribution scope for cost accounting; ignored by numeric backends.
    fn push_scope(&mut self, _name: &str) {}
    fn pop_scope(&mut self) {}
}

/// Immediate-mode evaluation with reference-counted values.
#[derive(Debug, Default)]
pub struct Eager<T> {
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Eager<T> {
    pub fn new() -> Self {
        Eager {
            _marker: std::marker::PhantomData,
        }
    }

    pub fn wrap(&self, t: Tensor<T>) -> Rc<Tensor<T>> {
        Rc::new(t)
    }
}

impl<T: Element> Backend for Eager<T> {
    type V = Rc<Tensor<T>>;

    fn shape(&self, v: &Self::V) -> Shape {
        v.shape()
    }

    fn parameter(&mut self, t: &Tensor<f32>, _trainable: bool) -> Self::V {
        Rc::new(t.cast())
    }

    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, stride: usize, pad: usize) -> Result<Self::V> {
        kernels::conv2d(x, w, b.map(|b| b.as_ref()), stride, pad).map(Rc::new)
    }

    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V> {
        kernels::linear(x, w, b.map(|b| b.as_ref())).map(Rc::new)
    }

    fn leaky_relu(&mut self, x: &Self::V, slope: f64) -> Self::V {
        let s = T::of(slope);
        Rc::new(kernels::map(x, |v| if v > T::zero() { v } else { v * s }))
    }

    fn tanh(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::map(x, |v| v.tanh()))
    }

    fn sigmoid(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::map(x, sigmoid))
    }

    fn clamp01(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::map(x, clamp01))
    }

    fn square(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::map(x, |v| v * v))
    }

    fn abs(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::map(x, |v| v.abs()))
    }

    fn scale(&mut self, x: &Self::V, c: f64) -> Self::V {
        let c = T::of(c);
        Rc::new(kernels::map(x, |v| v * c))
    }

    fn add_scalar(&mut self, x: &Self::V, c: f64) -> Self::V {
        let c = T::of(c);
        Rc::new(kernels::map(x, |v| v + c))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        kernels::broadcast_map(a, b, |x, y| x + y).map(Rc::new)
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        kernels::broadcast_map(a, b, |x, y| x - y).map(Rc::new)
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        kernels::broadcast_map(a, b, |x, y| x * y).map(Rc::new)
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        kernels::broadcast_map(a, b, |x, y| x / y).map(Rc::new)
    }

    fn concat_channels(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| p.as_ref()).collect();
        kernels::concat_channels(&refs).map(Rc::new)
    }

    fn global_avg_pool(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::global_avg_pool(x))
    }

    fn mean(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::mean_all(x))
    }

    fn sum(&mut self, x: &Self::V) -> Self::V {
        Rc::new(kernels::sum_all(x))
    }

    fn pixel_unshuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V> {
        kernels::pixel_unshuffle(x, r).map(Rc::new)
    }

    fn pixel_shuffle(&mut self, x: &Self::V, r: usize) -> Result<Self::V> {
        kernels::pixel_shuffle(x, r).map(Rc::new)
    }

    fn resize_bilinear(&mut self, x: &Self::V, h: usize, w: usize) -> Result<Self::V> {
        kernels::resize_bilinear(x, h, w).map(Rc::new)
    }

    fn max_pool2(&mut self, x: &Self::V) -> Result<Self::V> {
        kernels::max_pool2(x).map(|(t, _)| Rc::new(t))
    }

    fn blur_valid(&mut self, x: &Self::V, kernel: &[f64]) -> Result<Self::V> {
        kernels::blur_valid(x, kernel).map(Rc::new)
    }

    fn forward_diff(&mut self, x: &Self::V, axis: Axis) -> Result<Self::V> {
        kernels::forward_diff(x, axis).map(Rc::new)
    }

    fn detach(&mut self, x: &Self::V) -> Self::V {
        x.clone()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[inline]
pub(crate) fn clamp01<T: Element>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else if v > T::one() {
        T::one()
    } else {
        v
    }
}
