//! Seeded synthetic documents and degradations for paired training data.

pub mod dataset;
pub mod degrade;
pub mod render;

pub use dataset::{build_dataset, generate_samples, make_sample, sample_seed, DatasetManifest, ManifestRow, Sample};
pub use degrade::{degrade, degrade_stage, gaussian_blur, DegradeConfig, DegradeKind};
pub use render::{render_document, render_gradient};
