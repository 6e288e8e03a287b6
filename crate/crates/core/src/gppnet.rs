//! Global parameter network: a small convolutional regressor on a fixed-size
//! thumbnail whose three outputs drive full-resolution color filters.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Backend, Conv2d, Eager, LayerInfo, Linear, ParamStore, Shape, Tensor, LEAKY_SLOPE};
use crate::error::{config_err, shape_err, Error, Result};
use crate::imageio::{filter, FilterKind, ImageBuffer, ParamSet, ResizeMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GppnetConfig {
    /// Output width of each backbone stage.
    pub widths: Vec<usize>,
    pub convs_per_stage: usize,
    pub head_hidden: usize,
    /// Side of the square thumbnail the backbone sees.
    pub thumbnail: usize,
    pub seed: u64,
}

impl Default for GppnetConfig {
    fn default() -> Self {
        GppnetConfig {
            widths: vec![16, 32, 64, 96, 128],
            convs_per_stage: 3,
            head_hidden: 64,
            thumbnail: 224,
            seed: 7,
        }
    }
}

impl GppnetConfig {
    /// Narrow backbone for desk-scale training runs.
    pub fn toy() -> Self {
        GppnetConfig {
            widths: vec![8, 12, 16, 24, 32],
            head_hidden: 32,
            ..Self::default()
        }
    }

    /// Same topology with tiny widths, for gradient checks.
    pub fn micro() -> Self {
        GppnetConfig {
            widths: vec![2, 3, 3, 4, 4],
            head_hidden: 3,
            thumbnail: 16,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    Concatenation,
    Cascading,
    Additive,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [
        FusionStrategy::Cascading,
        FusionStrategy::Additive,
        FusionStrategy::Concatenation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Concatenation => "concatenation",
            FusionStrategy::Cascading => "cascading",
            FusionStrategy::Additive => "additive",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            FusionStrategy::Concatenation => "Concatenation",
            FusionStrategy::Cascading => "Cascading",
            FusionStrategy::Additive => "Additive",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown fusion strategy {s:?}"))
    }
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Linear,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct GppnetModel {
    pub config: GppnetConfig,
    pub store: ParamStore,
    backbone: Vec<Conv2d>,
    heads: Vec<Head>,
    fusion: Conv2d,
}

/// Output of the differentiable global stage.
pub struct GlobalOutput<V> {
    pub image: V,
    /// Brightness, contrast and saturation, each (N, 1, 1, 1).
    pub params: [V; 3],
}

/// Weights of a 1×1 conv that averages three groups of three channels.
fn averaging_weights() -> Tensor<f32> {
    let third = 1.0f32 / 3.0;
    Tensor::from_fn(
        Shape::new(3, 9, 1, 1),
        |[o, i, _, _]| if i % 3 == o { third } else { 0.0 },
    )
}

pub fn build_gppnet(config: &GppnetConfig) -> Result<GppnetModel> {
    if config.widths.is_empty() || config.widths.contains(&0) {
        return Err(config_err!("gppnet widths must be non-empty and positive"));
    }
    if config.convs_per_stage == 0 || config.head_hidden == 0 || config.thumbnail == 0 {
        return Err(config_err!(
            "gppnet convs_per_stage, head_hidden and thumbnail must be positive"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let mut backbone = Vec::new();
    let mut cin = 3;
    for &w in &config.widths {
        for l in 0..config.convs_per_stage {
            let stride = if l + 1 == config.convs_per_stage { 2 } else { 1 };
            let name = format!("gppnet.backbone.{}", backbone.len());
            backbone.push(Conv2d::new(&mut store, &mut rng, &name, cin, w, 3, stride, 1)?);
            cin = w;
        }
    }
    let mut heads = Vec::new();
    for kind in FilterKind::ALL {
        let hidden = Linear::new(
            &mut store,
            &mut rng,
            &format!("gppnet.head.{kind}.0"),
            cin,
            config.head_hidden,
        )?;
        let out = Linear::new(
            &mut store,
            &mut rng,
            &format!("gppnet.head.{kind}.1"),
            config.head_hidden,
            1,
        )?;
        // untrained heads predict the identity filters
        store.set(
            &format!("gppnet.head.{kind}.1.weight"),
            Tensor::zeros(Shape::new(1, config.head_hidden, 1, 1)),
        )?;
        heads.push(Head { hidden, out });
    }
    let fusion = Conv2d::new(&mut store, &mut rng, "gppnet.fusion", 9, 3, 1, 1, 0)?;
    store.set("gppnet.fusion.weight", averaging_weights())?;
    Ok(GppnetModel {
        config: config.clone(),
        store,
        backbone,
        heads,
        fusion,
    })
}

impl GppnetModel {
    /// Every weighted layer in registration order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out: Vec<LayerInfo> = self.backbone.iter().map(|c| c.info.clone()).collect();
        for h in &self.heads {
            out.push(h.hidden.info.clone());
            out.push(h.out.info.clone());
        }
        out.push(self.fusion.info.clone());
        out
    }

    pub fn backbone_layers(&self) -> usize {
        self.backbone.len()
    }

    /// Tanh-bounded filter parameters from a thumbnail batch (N, 3, t, t).
    pub fn predict<B: Backend>(&self, b: &mut B, params: &[B::V], thumb: &B::V) -> Result<[B::V; 3]> {
        let s = b.shape(thumb);
        if s.c != 3 {
            return Err(shape_err!("gppnet expects 3-channel input, got {}", s.c));
        }
        b.push_scope("gppnet/backbone");
        let mut h = thumb.clone();
        for conv in &self.backbone {
            h = conv.forward(b, params, &h)?;
            h = b.leaky_relu(&h, LEAKY_SLOPE);
        }
        let feat = b.global_avg_pool(&h);
        b.pop_scope();
        b.push_scope("gppnet/heads");
        let mut outs = Vec::with_capacity(3);
        for head in &self.heads {
            let z = head.hidden.forward(b, params, &feat)?;
            let z = b.leaky_relu(&z, LEAKY_SLOPE);
            let z = head.out.forward(b, params, &z)?;
            outs.push(b.tanh(&z));
        }
        b.pop_scope();
        Ok(outs.try_into().unwrap_or_else(|_| unreachable!()))
    }

    /// Applies filters and fusion at the resolution of `x`.
    pub fn apply<B: Backend>(
        &self,
        b: &mut B,
        params: &[B::V],
        x: &B::V,
        p: &[B::V; 3],
        strategy: FusionStrategy,
    ) -> Result<B::V> {
        b.push_scope("gppnet/filters");
        let out = match strategy {
            FusionStrategy::Cascading => {
                let mut y = x.clone();
                for (k, pk) in FilterKind::ALL.into_iter().zip(p) {
                    y = filter(b, &y, k, pk)?;
                }
                y
            }
            FusionStrategy::Concatenation | FusionStrategy::Additive => {
                let mut branches = Vec::with_capacity(3);
                for (k, pk) in FilterKind::ALL.into_iter().zip(p) {
                    branches.push(filter(b, x, k, pk)?);
                }
                b.pop_scope();
                b.push_scope("gppnet/fusion");
                self.fuse_branches(b, params, &branches, strategy)?
            }
        };
        b.pop_scope();
        Ok(out)
    }

    fn fuse_branches<B: Backend>(
        &self,
        b: &mut B,
        params: &[B::V],
        branches: &[B::V],
        strategy: FusionStrategy,
    ) -> Result<B::V> {
        let stacked = b.concat_channels(branches)?;
        let fused = match strategy {
            FusionStrategy::Concatenation => self.fusion.forward(b, params, &stacked)?,
            _ => {
                let w = b.constant(&averaging_weights());
                b.conv2d(&stacked, &w, None, 1, 0)?
            }
        };
        Ok(b.clamp01(&fused))
    }

    /// Full global stage on a batch `x`: thumbnail, parameters, fused image.
    pub fn forward<B: Backend>(
        &self,
        b: &mut B,
        params: &[B::V],
        x: &B::V,
        strategy: FusionStrategy,
    ) -> Result<GlobalOutput<B::V>> {
        let t = self.config.thumbnail;
        let s = b.shape(x);
        let thumb = if (s.h, s.w) == (t, t) {
            x.clone()
        } else {
            b.resize_bilinear(x, t, t)?
        };
        let p = self.predict(b, params, &thumb)?;
        let image = self.apply(b, params, x, &p, strategy)?;
        Ok(GlobalOutput { image, params: p })
    }

    pub fn predict_params(&self, img: &ImageBuffer) -> Result<ParamSet> {
        let t = self.config.thumbnail;
        let thumb = img.to_rgb().resize(t, t, ResizeMethod::Bilinear)?;
        let mut b = Eager::<f32>::new();
        let params = self.store.bind(&mut b, false);
        let x = b.constant(&thumb.to_tensor());
        let p = self.predict(&mut b, &params, &x)?;
        Ok(ParamSet {
            brightness: p[0].item() as f64,
            contrast: p[1].item() as f64,
            saturation: p[2].item() as f64,
        })
    }

    /// Combines three filtered images. Cascading ignores `branches` and
    /// filters `source` sequentially with `params`.
    pub fn fuse(
        &self,
        branches: &[ImageBuffer; 3],
        strategy: FusionStrategy,
        source: &ImageBuffer,
        params: &ParamSet,
    ) -> Result<ImageBuffer> {
        let mut b = Eager::<f32>::new();
        let weights = self.store.bind(&mut b, false);
        if strategy == FusionStrategy::Cascading {
            let x = b.constant(&source.to_rgb().to_tensor());
            let p = param_values(&mut b, params);
            let y = self.apply(&mut b, &weights, &x, &p, strategy)?;
            return ImageBuffer::from_tensor(&y);
        }
        if !branches.iter().all(|i| i.same_extent(&branches[0])) || branches[0].channels() != 3 {
            return Err(shape_err!("fusion needs three RGB branch images of equal extent"));
        }
        let vs: Vec<_> = branches.iter().map(|i| b.constant(&i.to_tensor())).collect();
        let y = self.fuse_branches(&mut b, &weights, &vs, strategy)?;
        ImageBuffer::from_tensor(&y)
    }

    pub fn enhance_global(&self, img: &ImageBuffer, strategy: FusionStrategy) -> Result<ImageBuffer> {
        let p = self.predict_params(img)?;
        self.enhance_global_with(img, &p, strategy)
    }

    /// Global stage with externally supplied parameters.
    pub fn enhance_global_with(
        &self,
        img: &ImageBuffer,
        p: &ParamSet,
        strategy: FusionStrategy,
    ) -> Result<ImageBuffer> {
        let mut b = Eager::<f32>::new();
        let weights = self.store.bind(&mut b, false);
        let x = b.constant(&img.to_rgb().to_tensor());
        let pv = param_values(&mut b, p);
        let y = self.apply(&mut b, &weights, &x, &pv, strategy)?;
        ImageBuffer::from_tensor(&y)
    }
}

fn param_values<B: Backend>(b: &mut B, p: &ParamSet) -> [B::V; 3] {
    p.as_array().map(|v| b.constant(&Tensor::scalar(v as f32)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::LayerKind;
    use crate::imageio::apply_filter;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |y, x, c| ((y * 7 + x * 3 + c * 5) % 23) as f32 / 22.0)
    }

    #[test]
    fn registry_has_fifteen_backbone_convs() {
        let m = build_gppnet(&GppnetConfig::default()).unwrap();
        let convs = m
            .layers()
            .iter()
            .filter(|l| l.name.starts_with("gppnet.backbone") && matches!(l.kind, LayerKind::Conv2d { .. }))
            .count();
        assert_eq!(convs, 15);
        let total: usize = m.layers().iter().map(LayerInfo::param_count).sum();
        assert_eq!(total, m.store.num_elements());
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_gppnet(&GppnetConfig::default()).unwrap();
        let b = build_gppnet(&GppnetConfig::default()).unwrap();
        assert_eq!(a.store.content_hash(), b.store.content_hash());
    }

    #[test]
    fn zero_widths_are_rejected() {
        let cfg = GppnetConfig {
            widths: vec![4, 0],
            ..GppnetConfig::micro()
        };
        assert!(matches!(build_gppnet(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn untrained_model_is_identity() {
        let m = build_gppnet(&GppnetConfig::micro()).unwrap();
        let img = ramp(12, 20);
        assert_eq!(m.predict_params(&img).unwrap(), ParamSet::default());
        for s in FusionStrategy::ALL {
            assert_eq!(m.enhance_global(&img, s).unwrap(), img, "{s}");
        }
    }

    #[test]
    fn additive_with_forced_brightness_matches_formula() {
        let m = build_gppnet(&GppnetConfig::micro()).unwrap();
        let img = ramp(6, 5);
        let p = ParamSet::new(0.2, 0.0, 0.0).unwrap();
        let out = m.enhance_global_with(&img, &p, FusionStrategy::Additive).unwrap();
        for (o, v) in out.data().iter().zip(img.data()) {
            let bright = (v * 1.2).min(1.0);
            let expect = (bright + 2.0 * v) / 3.0;
            assert!((o - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn cascading_applies_filters_in_order() {
        let m = build_gppnet(&GppnetConfig::micro()).unwrap();
        let img = ramp(5, 4);
        let p = ParamSet::new(0.1, -0.3, 0.4).unwrap();
        let out = m
            .fuse(
                &[img.clone(), img.clone(), img.clone()],
                FusionStrategy::Cascading,
                &img,
                &p,
            )
            .unwrap();
        let mut expect = img.clone();
        for k in FilterKind::ALL {
            expect = apply_filter(&expect, k, p.get(k)).unwrap();
        }
        assert!(out.max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in FusionStrategy::ALL {
            assert_eq!(s.name().parse::<FusionStrategy>().unwrap(), s);
        }
        assert!("stacking".parse::<FusionStrategy>().is_err());
    }
}
