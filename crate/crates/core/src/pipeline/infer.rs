use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{Config, InferenceMode, StageOrder};
use crate::dblrnet::{apply_maps, CoefficientMaps, DblrnetModel, RefineMode};
use crate::diffcore::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::evalkit::{count_dblrnet, count_gppnet};
use crate::gppnet::FusionStrategy;
use crate::imageio::ImageBuffer;
use crate::synthdoc::render_document;

/// Smallest accepted image side.
pub const MIN_EXTENT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhanceOptions {
    pub mode: InferenceMode,
    pub k_fast: usize,
    pub stage_order: StageOrder,
    pub fusion: FusionStrategy,
    pub refine_mode: RefineMode,
}

impl EnhanceOptions {
    pub fn from_config(cfg: &Config, mode: InferenceMode) -> Self {
        EnhanceOptions {
            mode,
            k_fast: cfg.train.k_fast,
            stage_order: cfg.train.stage_order,
            fusion: cfg.train.fusion,
            refine_mode: cfg.train.refine_mode,
        }
    }

    /// Coefficient down-factor actually used.
    pub fn k(&self) -> usize {
        match self.mode {
            InferenceMode::Baseline => 1,
            InferenceMode::Fast => self.k_fast,
        }
    }

    /// Both modes pad to the fast-mode multiple so they see the same input.
    fn pad_multiple(&self, model: &DblrnetModel) -> usize {
        match self.refine_mode {
            RefineMode::Parametric => model.config.required_multiple(self.k_fast.max(1)),
            RefineMode::Direct => model.config.required_multiple(1),
        }
    }
}

fn padded_extent(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

fn crop_tensor(t: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    if h > s.h || w > s.w {
        return Err(shape_err!("cannot crop {:?} to {h}×{w}", s));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |[n, c, y, x]| {
        t.at(n, c, y, x)
    }))
}

/// Coefficient maps for `img`, computed on a reflect-padded copy whose extent
/// is a multiple of `multiple` and cropped back.
pub fn padded_coefficients(
    model: &DblrnetModel,
    img: &ImageBuffer,
    k: usize,
    multiple: usize,
) -> Result<CoefficientMaps> {
    let (h, w) = (img.height(), img.width());
    let padded = img
        .to_rgb()
        .reflect_pad(padded_extent(h, multiple) - h, padded_extent(w, multiple) - w)?;
    let maps = model.coeff_branch(&padded, k)?;
    Ok(CoefficientMaps {
        alpha: crop_tensor(&maps.alpha, h, w)?,
        beta: crop_tensor(&maps.beta, h, w)?,
    })
}

fn refine(model: &DblrnetModel, img: &ImageBuffer, opts: &EnhanceOptions) -> Result<ImageBuffer> {
    let m = opts.pad_multiple(model);
    match opts.refine_mode {
        RefineMode::Parametric => {
            let maps = padded_coefficients(model, img, opts.k(), m)?;
            let smooth = model.smooth_branch(img)?;
            apply_maps(&smooth, &maps)
        }
        RefineMode::Direct => {
            let (h, w) = (img.height(), img.width());
            let padded = img.reflect_pad(padded_extent(h, m) - h, padded_extent(w, m) - w)?;
            model.direct_predict(&padded)?.crop(0, 0, h, w)
        }
    }
}

/// Runs the configured stage composition on one image. The output has the
/// input's extent.
pub fn enhance_pipeline(ck: &Checkpoint, img: &ImageBuffer, opts: &EnhanceOptions) -> Result<ImageBuffer> {
    if img.height() < MIN_EXTENT || img.width() < MIN_EXTENT {
        return Err(arg_err!(
            "image {}×{} is below the minimum side {MIN_EXTENT}",
            img.height(),
            img.width()
        ));
    }
    if opts.k_fast == 0 {
        return Err(arg_err!("k_fast must be at least 1"));
    }
    let img = img.to_rgb();
    let global = |x: &ImageBuffer| ck.gppnet.enhance_global(x, opts.fusion);
    match opts.stage_order {
        StageOrder::GlobalOnly => global(&img),
        StageOrder::GlobalThenLocal => refine(&ck.dblrnet, &global(&img)?, opts),
        StageOrder::LocalThenGlobal => global(&refine(&ck.dblrnet, &img, opts)?),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub size: usize,
    /// Extent the refinement stage runs at after padding.
    pub padded: usize,
    pub baseline_flops: u64,
    pub fast_flops: u64,
    pub gppnet_backbone_flops: u64,
    /// Whole coefficient path: resize, network and upsampling.
    pub coeff_baseline_flops: u64,
    pub coeff_fast_flops: u64,
    /// Fast/baseline FLOPs of the coefficient network interior.
    pub coeff_net_ratio: f64,
    /// 1 − fast/baseline over the whole coefficient path.
    pub coeff_path_reduction: f64,
    pub baseline_ms: Option<f64>,
    pub fast_ms: Option<f64>,
    pub coeff_baseline_ms: Option<f64>,
    pub coeff_fast_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k_fast: usize,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Analytic FLOPs per square size and, when `timing` is set, wall times of
/// both modes on a rendered page.
pub fn bench(ck: &Checkpoint, sizes: &[usize], opts: &EnhanceOptions, timing: bool) -> Result<BenchReport> {
    let k = opts.k_fast;
    if k == 0 {
        return Err(arg_err!("k_fast must be at least 1"));
    }
    let dbl = &ck.dblrnet;
    let mut entries = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size < MIN_EXTENT {
            return Err(arg_err!("bench size {size} is below the minimum side {MIN_EXTENT}"));
        }
        let padded = padded_extent(size, dbl.config.required_multiple(k));
        let gpp = count_gppnet(&ck.gppnet, size, size, opts.fusion)?;
        let base = count_dblrnet(dbl, padded, padded, 1, RefineMode::Parametric)?;
        let fast = count_dblrnet(dbl, padded, padded, k, RefineMode::Parametric)?;
        let coeff_b = base.scope_total("dblrnet/coeff");
        let coeff_f = fast.scope_total("dblrnet/coeff");
        let net_ratio = fast.scope_total("dblrnet/coeff/net") as f64 / base.scope_total("dblrnet/coeff/net") as f64;
        let mut entry = BenchEntry {
            size,
            padded,
            baseline_flops: gpp.total + base.total,
            fast_flops: gpp.total + fast.total,
            gppnet_backbone_flops: gpp.scope_total("gppnet/backbone"),
            coeff_baseline_flops: coeff_b,
            coeff_fast_flops: coeff_f,
            coeff_net_ratio: net_ratio,
            coeff_path_reduction: 1.0 - coeff_f as f64 / coeff_b as f64,
            baseline_ms: None,
            fast_ms: None,
            coeff_baseline_ms: None,
            coeff_fast_ms: None,
        };
        if timing {
            let img = render_document(size as u64, size, size)?;
            let pad_img = img.reflect_pad(padded - size, padded - size)?;
            let base_opts = EnhanceOptions {
                mode: InferenceMode::Baseline,
                stage_order: StageOrder::GlobalThenLocal,
                refine_mode: RefineMode::Parametric,
                ..*opts
            };
            let fast_opts = EnhanceOptions {
                mode: InferenceMode::Fast,
                ..base_opts
            };
            entry.coeff_baseline_ms = Some(timed(|| dbl.coeff_branch(&pad_img, 1))?);
            entry.coeff_fast_ms = Some(timed(|| dbl.coeff_branch(&pad_img, k))?);
            entry.baseline_ms = Some(timed(|| enhance_pipeline(ck, &img, &base_opts))?);
            entry.fast_ms = Some(timed(|| enhance_pipeline(ck, &img, &fast_opts))?);
        }
        entries.push(entry);
    }
    Ok(BenchReport { k_fast: k, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dblrnet::DblrnetConfig;
    use crate::gppnet::GppnetConfig;
    use crate::synthdoc::render_gradient;

    fn micro() -> Checkpoint {
        Checkpoint::new(&Config {
            gppnet: GppnetConfig::micro(),
            dblrnet: DblrnetConfig::micro(),
            ..Config::default()
        })
        .unwrap()
    }

    fn opts(ck: &Checkpoint, mode: InferenceMode) -> EnhanceOptions {
        EnhanceOptions::from_config(&ck.config, mode)
    }

    #[test]
    fn global_only_matches_global_stage() {
        let ck = micro();
        let img = render_document(1, 64, 80).unwrap();
        let o = EnhanceOptions {
            stage_order: StageOrder::GlobalOnly,
            ..opts(&ck, InferenceMode::Baseline)
        };
        let out = enhance_pipeline(&ck, &img, &o).unwrap();
        assert_eq!(out, ck.gppnet.enhance_global(&img, o.fusion).unwrap());
    }

    #[test]
    fn odd_extents_round_trip() {
        let ck = micro();
        let img = render_gradient(2, 101, 67).unwrap();
        for mode in [InferenceMode::Baseline, InferenceMode::Fast] {
            for order in StageOrder::ALL {
                let o = EnhanceOptions {
                    stage_order: order,
                    ..opts(&ck, mode)
                };
                let out = enhance_pipeline(&ck, &img, &o).unwrap();
                assert_eq!((out.height(), out.width(), out.channels()), (101, 67, 3));
            }
        }
    }

    #[test]
    fn constant_maps_make_fast_equal_baseline() {
        // Untrained heads have zero weights, so the maps are constant.
        let ck = micro();
        let img = render_document(4, 96, 64).unwrap();
        let a = enhance_pipeline(&ck, &img, &opts(&ck, InferenceMode::Baseline)).unwrap();
        let b = enhance_pipeline(&ck, &img, &opts(&ck, InferenceMode::Fast)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_images_are_rejected() {
        let ck = micro();
        let img = ImageBuffer::filled(63, 100, 3, 0.5);
        assert!(enhance_pipeline(&ck, &img, &opts(&ck, InferenceMode::Baseline)).is_err());
    }

    #[test]
    fn bench_reports_quarter_ratio_and_fixed_backbone() {
        let ck = micro();
        let r = bench(&ck, &[64, 128, 256], &opts(&ck, InferenceMode::Fast), false).unwrap();
        let bb = r.entries[0].gppnet_backbone_flops;
        for e in &r.entries {
            assert_eq!(e.coeff_net_ratio, 0.25);
            assert_eq!(e.gppnet_backbone_flops, bb);
        }
        assert!(r.entries.windows(2).all(|w| w[0].baseline_flops <= w[1].baseline_flops));
    }
}
