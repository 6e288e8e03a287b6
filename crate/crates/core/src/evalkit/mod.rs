//! Quality metrics, spectral diagnostics and analytic FLOP accounting.

pub mod flops;
pub mod metrics;
pub mod spectral;

pub use flops::{FlopBreakdown, FlopCounter, FlopEntry};
pub use metrics::{evaluate_pairs, image_metrics, median, psnr, ImageMetrics, MetricReport, Summary, PSNR_CAP};
pub use spectral::{power_spectrum, spectral_profile, SpectralProfile};

use crate::dblrnet::{DblrnetModel, RefineMode};
use crate::diffcore::Shape;
use crate::error::Result;
use crate::gppnet::{FusionStrategy, GppnetModel};

/// FLOPs of the global stage on an `h`×`w` image.
pub fn count_gppnet(model: &GppnetModel, h: usize, w: usize, strategy: FusionStrategy) -> Result<FlopBreakdown> {
    let mut f = FlopCounter::new();
    let params = model.store.bind(&mut f, false);
    model.forward(&mut f, &params, &Shape::new(1, 3, h, w), strategy)?;
    Ok(f.breakdown)
}

/// FLOPs of the refinement stage on an `h`×`w` image with coefficient
/// down-factor `k`. Extents must satisfy the model's divisibility rule.
pub fn count_dblrnet(model: &DblrnetModel, h: usize, w: usize, k: usize, mode: RefineMode) -> Result<FlopBreakdown> {
    let mut f = FlopCounter::new();
    let params = model.store.bind(&mut f, false);
    model.forward(&mut f, &params, &Shape::new(1, 3, h, w), k, mode)?;
    Ok(f.breakdown)
}
