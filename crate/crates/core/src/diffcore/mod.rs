//! Minimal reverse-mode differentiation engine.
//!
//! Values are 4-D tensors. Networks are written once against [`Backend`] and
//! run eagerly for inference, on a [`Graph`] tape for training, or in f64 on a
//! tape for gradient checks.

pub mod adam;
pub mod backend;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use backend::{Backend, Eager};
pub use gradcheck::{grad_check, CheckLeaf, GradCheckOptions, GradCheckReport, GRAD_FLOOR};
pub use graph::{Graph, Var};
pub use kernels::Axis;
pub use params::{Conv2d, GradBuffer, LayerInfo, LayerKind, Linear, ParamStore};
pub use scalar::Element;
pub use tensor::{Shape, Tensor};

/// Default negative slope of leaky ReLU activations.
pub const LEAKY_SLOPE: f64 = 0.2;
