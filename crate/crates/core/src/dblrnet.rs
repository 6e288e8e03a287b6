//! Local refinement network: a three-layer smoother and a nested U-Net with
//! dense-block nodes that predicts per-pixel gain and offset maps.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Backend, Conv2d, Eager, LayerInfo, ParamStore, Shape, Tensor, LEAKY_SLOPE};
use crate::error::{arg_err, config_err, shape_err, Error, Result};
use crate::imageio::ImageBuffer;

const UNSHUFFLE: usize = 2;
const SMOOTH_KERNEL: [[f32; 3]; 3] = [[0.0, 0.125, 0.0], [0.125, 0.5, 0.125], [0.0, 0.125, 0.0]];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Output is `α ⊙ h(I) + β`.
    #[default]
    Parametric,
    /// Output pixels are predicted by the network directly.
    Direct,
}

impl RefineMode {
    pub fn name(self) -> &'static str {
        match self {
            RefineMode::Parametric => "parametric",
            RefineMode::Direct => "direct",
        }
    }
}

impl fmt::Display for RefineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(RefineMode::Parametric),
            "direct" => Ok(RefineMode::Direct),
            _ => Err(config_err!("unknown refine mode {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DblrnetConfig {
    /// Node width per grid level; its length is the grid depth.
    pub widths: Vec<usize>,
    /// Dense-block growth rate per level.
    pub growth: Vec<usize>,
    /// Dense-block conv count per level.
    pub block_layers: Vec<usize>,
    pub smooth_width: usize,
    /// Replace the smoother with the identity.
    pub bypass_smooth: bool,
    pub seed: u64,
}

impl Default for DblrnetConfig {
    fn default() -> Self {
        DblrnetConfig {
            widths: vec![8, 16, 32, 128, 384],
            growth: vec![4, 8, 16, 32, 256],
            block_layers: vec![2, 2, 3, 3, 3],
            smooth_width: 16,
            bypass_smooth: false,
            seed: 11,
        }
    }
}

impl DblrnetConfig {
    /// Three-level grid with tiny widths, for gradient checks on 16² inputs.
    pub fn micro() -> Self {
        DblrnetConfig {
            widths: vec![2, 3, 4],
            growth: vec![2, 2, 2],
            block_layers: vec![2, 2, 2],
            smooth_width: 3,
            ..Self::default()
        }
    }

    /// Mid-size grid used for desk-scale training runs.
    pub fn toy() -> Self {
        DblrnetConfig {
            widths: vec![8, 16, 32, 48],
            growth: vec![4, 8, 8, 16],
            block_layers: vec![2, 2, 2, 2],
            smooth_width: 8,
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Input extents must be multiples of this for factor `k`.
    pub fn required_multiple(&self, k: usize) -> usize {
        UNSHUFFLE * k * (1 << (self.depth().max(1) - 1))
    }
}

/// Stack of 3×3 convs, each fed the concatenation of the block input and all
/// earlier outputs, closed by a 1×1 transition.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub layers: Vec<Conv2d>,
    pub transition: Conv2d,
    pub growth: usize,
}

impl DenseBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        growth: usize,
        count: usize,
        cout: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(count);
        for l in 0..count {
            layers.push(Conv2d::same(
                store,
                rng,
                &format!("{name}.conv{l}"),
                cin + l * growth,
                growth,
                3,
            )?);
        }
        let transition = Conv2d::same(store, rng, &format!("{name}.transition"), cin + count * growth, cout, 1)?;
        Ok(DenseBlock {
            layers,
            transition,
            growth,
        })
    }

    pub fn forward<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        let mut feats = vec![x.clone()];
        for conv in &self.layers {
            let input = if feats.len() == 1 {
                feats[0].clone()
            } else {
                b.concat_channels(&feats)?
            };
            let y = conv.forward(b, params, &input)?;
            feats.push(b.leaky_relu(&y, LEAKY_SLOPE));
        }
        let all = b.concat_channels(&feats)?;
        let y = self.transition.forward(b, params, &all)?;
        Ok(b.leaky_relu(&y, LEAKY_SLOPE))
    }

    fn infos(&self) -> impl Iterator<Item = LayerInfo> + '_ {
        self.layers
            .iter()
            .chain(std::iter::once(&self.transition))
            .map(|c| c.info.clone())
    }
}

/// Per-pixel, per-channel gain and offset at the resolution of the image
/// they apply to.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    pub alpha: Tensor<f32>,
    pub beta: Tensor<f32>,
}

pub struct LocalOutput<V> {
    pub image: V,
    /// (α, β) in parametric mode.
    pub maps: Option<(V, V)>,
}

#[derive(Clone, Debug)]
pub struct DblrnetModel {
    pub config: DblrnetConfig,
    pub store: ParamStore,
    smooth: Vec<Conv2d>,
    /// Node X^{i,j} lives at `nodes[i][j]`.
    nodes: Vec<Vec<DenseBlock>>,
    alpha_head: Conv2d,
    beta_head: Conv2d,
    direct_head: Conv2d,
}

pub fn build_dblrnet(config: &DblrnetConfig) -> Result<DblrnetModel> {
    let d = config.depth();
    if d == 0 || config.growth.len() != d || config.block_layers.len() != d {
        return Err(config_err!(
            "widths, growth and block_layers must be non-empty and equally long ({}, {}, {})",
            d,
            config.growth.len(),
            config.block_layers.len()
        ));
    }
    let all = config.widths.iter().chain(&config.growth).chain(&config.block_layers);
    if all.copied().any(|v| v == 0) || config.smooth_width == 0 {
        return Err(config_err!("dblrnet extents must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();

    let sw = config.smooth_width;
    let smooth = vec![
        Conv2d::same(&mut store, &mut rng, "dblrnet.smooth.0", 3, sw, 3)?,
        Conv2d::same(&mut store, &mut rng, "dblrnet.smooth.1", sw, sw, 3)?,
        Conv2d::same(&mut store, &mut rng, "dblrnet.smooth.2", sw, 3, 3)?,
    ];
    for conv in &smooth {
        seed_smoother(store.get_mut(conv.weight));
    }

    let w = &config.widths;
    let mut nodes: Vec<Vec<DenseBlock>> = (0..d).map(|_| Vec::new()).collect();
    for i in 0..d {
        let cin = if i == 0 { 3 * UNSHUFFLE * UNSHUFFLE } else { w[i - 1] };
        let name = format!("dblrnet.node{i}_0");
        nodes[i].push(DenseBlock::new(
            &mut store,
            &mut rng,
            &name,
            cin,
            config.growth[i],
            config.block_layers[i],
            w[i],
        )?);
    }
    for j in 1..d {
        for i in 0..d - j {
            let cin = j * w[i] + w[i + 1];
            let name = format!("dblrnet.node{i}_{j}");
            nodes[i].push(DenseBlock::new(
                &mut store,
                &mut rng,
                &name,
                cin,
                config.growth[i],
                config.block_layers[i],
                w[i],
            )?);
        }
    }

    let head = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cout: usize, bias: f32| -> Result<Conv2d> {
        let c = Conv2d::same(store, rng, name, w[0], cout, 1)?;
        store.set(&format!("{name}.weight"), Tensor::zeros(Shape::new(cout, w[0], 1, 1)))?;
        store.set(&format!("{name}.bias"), Tensor::full(Shape::new(1, cout, 1, 1), bias))?;
        Ok(c)
    };
    let alpha_head = head(&mut store, &mut rng, "dblrnet.head.alpha", 3, 1.0)?;
    let beta_head = head(&mut store, &mut rng, "dblrnet.head.beta", 3, 0.0)?;
    let direct_head = head(
        &mut store,
        &mut rng,
        "dblrnet.head.direct",
        3 * UNSHUFFLE * UNSHUFFLE,
        0.0,
    )?;

    Ok(DblrnetModel {
        config: config.clone(),
        store,
        smooth,
        nodes,
        alpha_head,
        beta_head,
        direct_head,
    })
}

/// Routes channel c to output c (c < 3) through a small normalized kernel, so
/// the untrained branch is a fixed 7×7 smoother of nonnegative images.
fn seed_smoother(w: &mut Tensor<f32>) {
    let s = w.shape();
    for co in 0..3.min(s.n) {
        for ci in 0..s.c {
            for (y, row) in SMOOTH_KERNEL.iter().enumerate() {
                for (x, k) in row.iter().enumerate() {
                    let i = w.index(co, ci, y, x);
                    w.data_mut()[i] = if ci == co { *k } else { 0.0 };
                }
            }
        }
    }
}

impl DblrnetModel {
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out: Vec<LayerInfo> = self.smooth.iter().map(|c| c.info.clone()).collect();
        for row in &self.nodes {
            for node in row {
                out.extend(node.infos());
            }
        }
        for h in [&self.alpha_head, &self.beta_head, &self.direct_head] {
            out.push(h.info.clone());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Three same-padded convs; the output is clamped to [0, 1].
    pub fn smooth<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        if self.config.bypass_smooth {
            return Ok(x.clone());
        }
        b.push_scope("dblrnet/smooth");
        let mut h = x.clone();
        for (i, conv) in self.smooth.iter().enumerate() {
            h = conv.forward(b, params, &h)?;
            if i + 1 < self.smooth.len() {
                h = b.leaky_relu(&h, LEAKY_SLOPE);
            }
        }
        let out = b.clamp01(&h);
        b.pop_scope();
        Ok(out)
    }

    fn check_extent(&self, s: Shape, k: usize) -> Result<()> {
        if k == 0 {
            return Err(arg_err!("down factor must be at least 1"));
        }
        let m = self.config.required_multiple(k);
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            return Err(shape_err!(
                "extent {}×{} is not a multiple of {m} (down factor {k})",
                s.h,
                s.w
            ));
        }
        if s.c != 3 {
            return Err(shape_err!("refinement expects 3 channels, got {}", s.c));
        }
        Ok(())
    }

    /// Shared nested U-Net features at 1/(2k) resolution.
    pub fn features<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V, k: usize) -> Result<B::V> {
        let s = b.shape(x);
        self.check_extent(s, k)?;
        b.push_scope("dblrnet/coeff/resize");
        let small = if k == 1 {
            x.clone()
        } else {
            b.resize_bilinear(x, s.h / k, s.w / k)?
        };
        b.pop_scope();
        b.push_scope("dblrnet/coeff/net");
        let input = b.pixel_unshuffle(&small, UNSHUFFLE)?;
        let d = self.config.depth();
        let mut grid: Vec<Vec<B::V>> = (0..d).map(|_| Vec::new()).collect();
        for i in 0..d {
            let inp = if i == 0 {
                input.clone()
            } else {
                b.max_pool2(&grid[i - 1][0])?
            };
            let out = self.nodes[i][0].forward(b, params, &inp)?;
            grid[i].push(out);
        }
        for j in 1..d {
            for i in 0..d - j {
                let up = b.upsample_bilinear(&grid[i + 1][j - 1], 2)?;
                let mut parts: Vec<B::V> = grid[i][..j].to_vec();
                parts.push(up);
                let cat = b.concat_channels(&parts)?;
                let out = self.nodes[i][j].forward(b, params, &cat)?;
                grid[i].push(out);
            }
        }
        b.pop_scope();
        Ok(grid[0][d - 1].clone())
    }

    /// (α, β) at the resolution of `x`.
    pub fn coefficients<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V, k: usize) -> Result<(B::V, B::V)> {
        let s = b.shape(x);
        let feat = self.features(b, params, x, k)?;
        b.push_scope("dblrnet/coeff/net");
        let alpha = self.alpha_head.forward(b, params, &feat)?;
        let beta = self.beta_head.forward(b, params, &feat)?;
        b.pop_scope();
        b.push_scope("dblrnet/coeff/upsample");
        let alpha = b.resize_bilinear(&alpha, s.h, s.w)?;
        let beta = b.resize_bilinear(&beta, s.h, s.w)?;
        b.pop_scope();
        Ok((alpha, beta))
    }

    /// `clamp(α ⊙ smooth + β)`.
    pub fn combine<B: Backend>(&self, b: &mut B, smooth: &B::V, alpha: &B::V, beta: &B::V) -> Result<B::V> {
        b.push_scope("dblrnet/affine");
        let y = b.mul(alpha, smooth)?;
        let y = b.add(&y, beta)?;
        let y = b.clamp01(&y);
        b.pop_scope();
        Ok(y)
    }

    pub fn direct<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        let feat = self.features(b, params, x, 1)?;
        b.push_scope("dblrnet/direct");
        let y = self.direct_head.forward(b, params, &feat)?;
        let y = b.pixel_shuffle(&y, UNSHUFFLE)?;
        let y = b.clamp01(&y);
        b.pop_scope();
        Ok(y)
    }

    pub fn forward<B: Backend>(
        &self,
        b: &mut B,
        params: &[B::V],
        x: &B::V,
        k: usize,
        mode: RefineMode,
    ) -> Result<LocalOutput<B::V>> {
        match mode {
            RefineMode::Direct => Ok(LocalOutput {
                image: self.direct(b, params, x)?,
                maps: None,
            }),
            RefineMode::Parametric => {
                let (alpha, beta) = self.coefficients(b, params, x, k)?;
                let h = self.smooth(b, params, x)?;
                let image = self.combine(b, &h, &alpha, &beta)?;
                Ok(LocalOutput {
                    image,
                    maps: Some((alpha, beta)),
                })
            }
        }
    }

    fn eager<R>(&self, f: impl FnOnce(&mut Eager<f32>, &[<Eager<f32> as Backend>::V]) -> Result<R>) -> Result<R> {
        let mut b = Eager::<f32>::new();
        let params = self.store.bind(&mut b, false);
        f(&mut b, &params)
    }

    pub fn smooth_branch(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        self.eager(|b, p| {
            let x = b.constant(&img.to_rgb().to_tensor());
            let y = self.smooth(b, p, &x)?;
            ImageBuffer::from_tensor(&y)
        })
    }

    pub fn coeff_branch(&self, img: &ImageBuffer, k: usize) -> Result<CoefficientMaps> {
        self.eager(|b, p| {
            let x = b.constant(&img.to_rgb().to_tensor());
            let (alpha, beta) = self.coefficients(b, p, &x, k)?;
            Ok(CoefficientMaps {
                alpha: (*alpha).clone(),
                beta: (*beta).clone(),
            })
        })
    }

    pub fn enhance_local(&self, img: &ImageBuffer, k: usize) -> Result<ImageBuffer> {
        self.eager(|b, p| {
            let x = b.constant(&img.to_rgb().to_tensor());
            let (alpha, beta) = self.coefficients(b, p, &x, k)?;
            let h = self.smooth(b, p, &x)?;
            let y = self.combine(b, &h, &alpha, &beta)?;
            ImageBuffer::from_tensor(&y)
        })
    }

    pub fn direct_predict(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        self.eager(|b, p| {
            let x = b.constant(&img.to_rgb().to_tensor());
            let y = self.direct(b, p, &x)?;
            ImageBuffer::from_tensor(&y)
        })
    }

    pub fn refine(&self, img: &ImageBuffer, k: usize, mode: RefineMode) -> Result<ImageBuffer> {
        match mode {
            RefineMode::Parametric => self.enhance_local(img, k),
            RefineMode::Direct => self.direct_predict(img),
        }
    }
}

/// Applies precomputed coefficient maps to a smoothed image.
pub fn apply_maps(smooth: &ImageBuffer, maps: &CoefficientMaps) -> Result<ImageBuffer> {
    let mut b = Eager::<f32>::new();
    let h = b.constant(&smooth.to_tensor());
    let a = b.constant(&maps.alpha);
    let be = b.constant(&maps.beta);
    if b.shape(&a) != b.shape(&h) || b.shape(&be) != b.shape(&h) {
        return Err(shape_err!("coefficient maps do not match the image extent"));
    }
    let y = b.mul(&a, &h)?;
    let y = b.add(&y, &be)?;
    let y = b.clamp01(&y);
    ImageBuffer::from_tensor(&y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::LayerKind;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |y, x, c| ((y * 5 + x * 3 + c * 7) % 19) as f32 / 18.0)
    }

    #[test]
    fn default_parameter_count_is_in_band() {
        let m = build_dblrnet(&DblrnetConfig::default()).unwrap();
        let n = m.num_params();
        assert!((3_400_000..=4_700_000).contains(&n), "{n}");
        let total: usize = m.layers().iter().map(LayerInfo::param_count).sum();
        assert_eq!(total, n);
    }

    #[test]
    fn dense_block_inputs_grow_by_rate() {
        let m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        let block = &m.nodes[1][0];
        for (l, conv) in block.layers.iter().enumerate() {
            match conv.info.kind {
                LayerKind::Conv2d { cin, .. } => assert_eq!(cin, 2 + l * block.growth),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn bias_initialized_heads_give_unit_gain() {
        let m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        let img = ramp(16, 32);
        for k in [1, 2] {
            let maps = m.coeff_branch(&img, k).unwrap();
            assert_eq!(maps.alpha.shape(), Shape::new(1, 3, 16, 32));
            assert!(maps.alpha.data().iter().all(|v| *v == 1.0));
            assert!(maps.beta.data().iter().all(|v| *v == 0.0));
        }
        assert_eq!(m.enhance_local(&img, 1).unwrap(), m.smooth_branch(&img).unwrap());
    }

    #[test]
    fn indivisible_extent_is_a_shape_error() {
        let m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        assert!(matches!(m.coeff_branch(&ramp(12, 16), 2), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn smooth_branch_keeps_odd_extents() {
        let m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        let out = m.smooth_branch(&ramp(11, 13)).unwrap();
        assert_eq!((out.height(), out.width()), (11, 13));
    }

    #[test]
    fn offset_only_heads_give_constant_image() {
        let mut m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        m.store
            .set("dblrnet.head.alpha.bias", Tensor::zeros(Shape::new(1, 3, 1, 1)))
            .unwrap();
        m.store
            .set("dblrnet.head.beta.bias", Tensor::full(Shape::new(1, 3, 1, 1), 0.3))
            .unwrap();
        let out = m.enhance_local(&ramp(16, 16), 1).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn zero_direct_head_gives_black() {
        let m = build_dblrnet(&DblrnetConfig::micro()).unwrap();
        let out = m.direct_predict(&ramp(16, 32)).unwrap();
        assert_eq!((out.height(), out.width()), (16, 32));
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("direct".parse::<RefineMode>().unwrap(), RefineMode::Direct);
        assert!("hybrid".parse::<RefineMode>().is_err());
    }
}
