use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::kernels::{conv2d_shape, Axis};
use crate::diffcore::{Backend, Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// One counted operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopEntry {
    pub scope: String,
    pub op: String,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub entries: Vec<FlopEntry>,
    pub by_scope: BTreeMap<String, u64>,
    pub total: u64,
}

impl FlopBreakdown {
    /// Sum over scopes equal to `prefix` or nested below it.
    pub fn scope_total(&self, prefix: &str) -> u64 {
        self.by_scope
            .iter()
            .filter(|(k, _)| *k == prefix || k.starts_with(&format!("{prefix}/")))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn merge(&mut self, other: &FlopBreakdown) {
        for e in &other.entries {
            self.push(e.clone());
        }
    }

    fn push(&mut self, e: FlopEntry) {
        *self.by_scope.entry(e.scope.clone()).or_default() += e.flops;
        self.total += e.flops;
        self.entries.push(e);
    }
}

/// Shape-only backend that tallies FLOPs.
///
/// Convolutions count `2·k²·Cin·Cout·Hout·Wout` per batch item, linear layers
/// `2·in·out`, and elementwise and resampling ops one per output element.
/// Global reductions count one per input element, valid blurs `4k` per
/// output element. Pure data movement (concat, shuffles) is free.
#[derive(Debug, Default)]
pub struct FlopCounter {
    scopes: Vec<String>,
    pub breakdown: FlopBreakdown,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&self, shape: Shape) -> Shape {
        shape
    }

    fn record(&mut self, op: &str, flops: u64) {
        let scope = self.scopes.last().cloned().unwrap_or_else(|| "other".to_string());
        self.breakdown.push(FlopEntry {
            scope,
            op: op.to_string(),
            flops,
        });
    }

    fn unary(&mut self, op: &str, x: &Shape) -> Shape {
        self.record(op, x.numel() as u64);
        *x
    }

    fn binary(&mut self, op: &str, a: &Shape, b: &Shape) -> Result<Shape> {
        let s = a.broadcast(b)?;
        self.record(op, s.numel() as u64);
        Ok(s)
    }

    fn reduce(&mut self, op: &str, x: &Shape) -> Shape {
        self.record(op, x.numel() as u64);
        Shape::scalar()
    }
}

impl Backend for FlopCounter {
    type V = Shape;

    fn shape(&self, v: &Shape) -> Shape {
        *v
    }

    fn parameter(&mut self, t: &Tensor<f32>, _trainable: bool) -> Shape {
        t.shape()
    }

    fn conv2d(&mut self, x: &Shape, w: &Shape, b: Option<&Shape>, stride: usize, pad: usize) -> Result<Shape> {
        let out = conv2d_shape(*x, *w, stride, pad)?;
        if let Some(b) = b {
            if b.numel() != w.n {
                return Err(shape_err!("bias {b:?} does not match {} output channels", w.n));
            }
        }
        let macs = (w.h * w.w * w.c * w.n) as u64 * (out.n * out.h * out.w) as u64;
        self.record("conv2d", 2 * macs);
        Ok(out)
    }

    fn linear(&mut self, x: &Shape, w: &Shape, _b: Option<&Shape>) -> Result<Shape> {
        let fan_in = x.c * x.h * x.w;
        if w.c * w.h * w.w != fan_in {
            return Err(shape_err!("linear input {x:?} does not match weight {w:?}"));
        }
        self.record("linear", 2 * (fan_in * w.n * x.n) as u64);
        Ok(Shape::new(x.n, w.n, 1, 1))
    }

    fn leaky_relu(&mut self, x: &Shape, _slope: f64) -> Shape {
        self.unary("leaky_relu", x)
    }
    fn tanh(&mut self, x: &Shape) -> Shape {
        self.unary("tanh", x)
    }
    fn sigmoid(&mut self, x: &Shape) -> Shape {
        self.unary("sigmoid", x)
    }
    fn clamp01(&mut self, x: &Shape) -> Shape {
        self.unary("clamp01", x)
    }
    fn square(&mut self, x: &Shape) -> Shape {
        self.unary("square", x)
    }
    fn abs(&mut self, x: &Shape) -> Shape {
        self.unary("abs", x)
    }
    fn scale(&mut self, x: &Shape, _c: f64) -> Shape {
        self.unary("scale", x)
    }
    fn add_scalar(&mut self, x: &Shape, _c: f64) -> Shape {
        self.unary("add_scalar", x)
    }
    fn add(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        self.binary("add", a, b)
    }
    fn sub(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        self.binary("sub", a, b)
    }
    fn mul(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        self.binary("mul", a, b)
    }
    fn div(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        self.binary("div", a, b)
    }

    fn concat_channels(&mut self, parts: &[Shape]) -> Result<Shape> {
        let first = parts.first().ok_or_else(|| arg_err!("concat of zero tensors"))?;
        let mut c = 0;
        for p in parts {
            if (p.n, p.h, p.w) != (first.n, first.h, first.w) {
                return Err(shape_err!(
                    "channel concat needs matching extents, got {first:?} and {p:?}"
                ));
            }
            c += p.c;
        }
        Ok(Shape::new(first.n, c, first.h, first.w))
    }

    fn global_avg_pool(&mut self, x: &Shape) -> Shape {
        self.record("global_avg_pool", x.numel() as u64);
        Shape::new(x.n, x.c, 1, 1)
    }
    fn mean(&mut self, x: &Shape) -> Shape {
        self.reduce("mean", x)
    }
    fn sum(&mut self, x: &Shape) -> Shape {
        self.reduce("sum", x)
    }

    fn pixel_unshuffle(&mut self, x: &Shape, r: usize) -> Result<Shape> {
        if r == 0 || !x.h.is_multiple_of(r) || !x.w.is_multiple_of(r) {
            return Err(shape_err!("pixel_unshuffle by {r} needs divisible extents, got {x:?}"));
        }
        Ok(Shape::new(x.n, x.c * r * r, x.h / r, x.w / r))
    }

    fn pixel_shuffle(&mut self, x: &Shape, r: usize) -> Result<Shape> {
        if r == 0 || !x.c.is_multiple_of(r * r) {
            return Err(shape_err!("pixel_shuffle by {r} needs divisible channels, got {x:?}"));
        }
        Ok(Shape::new(x.n, x.c / (r * r), x.h * r, x.w * r))
    }

    fn resize_bilinear(&mut self, x: &Shape, h: usize, w: usize) -> Result<Shape> {
        if h == 0 || w == 0 {
            return Err(arg_err!("resize target must be at least 1×1, got {h}×{w}"));
        }
        let out = Shape::new(x.n, x.c, h, w);
        self.record("resize_bilinear", out.numel() as u64);
        Ok(out)
    }

    fn max_pool2(&mut self, x: &Shape) -> Result<Shape> {
        if x.h < 2 || x.w < 2 {
            return Err(shape_err!("max_pool2 needs extents of at least 2, got {x:?}"));
        }
        let out = Shape::new(x.n, x.c, x.h / 2, x.w / 2);
        self.record("max_pool2", out.numel() as u64);
        Ok(out)
    }

    fn blur_valid(&mut self, x: &Shape, kernel: &[f64]) -> Result<Shape> {
        let k = kernel.len();
        if k == 0 || x.h < k || x.w < k {
            return Err(arg_err!("window of {k} does not fit extent {}×{}", x.h, x.w));
        }
        let out = Shape::new(x.n, x.c, x.h - k + 1, x.w - k + 1);
        self.record("blur_valid", (4 * k * out.numel()) as u64);
        Ok(out)
    }

    fn forward_diff(&mut self, x: &Shape, axis: Axis) -> Result<Shape> {
        let out = match axis {
            Axis::Height if x.h >= 2 => Shape::new(x.n, x.c, x.h - 1, x.w),
            Axis::Width if x.w >= 2 => Shape::new(x.n, x.c, x.h, x.w - 1),
            _ => return Err(shape_err!("forward difference needs extent ≥ 2, got {x:?}")),
        };
        self.record("forward_diff", out.numel() as u64);
        Ok(out)
    }

    fn detach(&mut self, x: &Shape) -> Shape {
        *x
    }

    fn push_scope(&mut self, name: &str) {
        self.scopes.push(name.to_string());
    }

    fn pop_scope(&mut self) {
        self.scopes.pop();
    }
}
