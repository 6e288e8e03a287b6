use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::Backend;
use super::graph::{Graph, Var};
use super::scalar::Element;
use super::tensor::{Shape, Tensor};
use crate::error::{config_err, shape_err, Result};

/// Named weights of one network, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor<f32> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<f32> {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<f32>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.shape().numel()).sum()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<f32>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| config_err!("unknown parameter {name}"))?;
        if self.tensors[id].shape() != tensor.shape() {
            return Err(shape_err!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[id].shape(),
                tensor.shape()
            ));
        }
        self.tensors[id] = tensor;
        Ok(())
    }

    /// Copies every tensor from `other`, which must have the same layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(config_err!("parameter layouts differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(shape_err!(
                    "parameter shape mismatch {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                ));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn bind<B: Backend>(&self, backend: &mut B, trainable: bool) -> Vec<B::V> {
        self.tensors.iter().map(|t| backend.parameter(t, trainable)).collect()
    }

    /// SHA-256 over names, shapes and little-endian weight bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape().dims() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gradient accumulator aligned with a [`ParamStore`]. It is only ever
/// cleared by an explicit [`GradBuffer::zero`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Vec<f32>>,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.tensors.iter().map(|t| vec![0.0; t.shape().numel()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, id: usize) -> &[f32] {
        &self.grads[id]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `scale ×` the gradients a backward pass left on `vars`.
    pub fn accumulate<T: Element>(&mut self, graph: &Graph<T>, vars: &[Var], scale: f32) {
        for (buf, v) in self.grads.iter_mut().zip(vars) {
            if let Some(g) = graph.grad(*v) {
                for (b, gv) in buf.iter_mut().zip(g.data()) {
                    *b += scale * gv.f64() as f32;
                }
            }
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| *v == 0.0))
    }

    pub fn max_abs(&self, id: usize) -> f32 {
        self.grads[id].iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Static description of a weighted layer, used for parameter and FLOP
/// accounting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerInfo {
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { k, cin, cout, .. } => k * k * cin * cout + cout,
            LayerKind::Linear { inputs, outputs } => inputs * outputs + outputs,
        }
    }
}

fn fan_in_uniform<R: Rng>(rng: &mut R, shape: Shape, fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let data = (0..shape.numel()).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub info: LayerInfo,
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 || k == 0 || stride == 0 {
            return Err(config_err!("layer {name}: extents must be positive"));
        }
        let w = fan_in_uniform(rng, Shape::new(cout, cin, k, k), cin * k * k);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1)))?;
        Ok(Conv2d {
            info: LayerInfo {
                name: name.to_string(),
                kind: LayerKind::Conv2d {
                    k,
                    cin,
                    cout,
                    stride,
                    pad,
                },
            },
            weight,
            bias,
            stride,
            pad,
        })
    }

    /// Same-padded k×k stride-1 convolution.
    pub fn same<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Result<Self> {
        Self::new(store, rng, name, cin, cout, k, 1, k / 2)
    }

    pub fn forward<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        b.conv2d(x, &params[self.weight], Some(&params[self.bias]), self.stride, self.pad)
    }
}

/// Fully connected layer on (N, C, 1, 1) activations.
#[derive(Clone, Debug)]
pub struct Linear {
    pub info: LayerInfo,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(config_err!("layer {name}: extents must be positive"));
        }
        let w = fan_in_uniform(rng, Shape::new(outputs, inputs, 1, 1), inputs);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, outputs, 1, 1)))?;
        Ok(Linear {
            info: LayerInfo {
                name: name.to_string(),
                kind: LayerKind::Linear { inputs, outputs },
            },
            weight,
            bias,
        })
    }

    pub fn forward<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        b.linear(x, &params[self.weight], Some(&params[self.bias]))
    }
}
