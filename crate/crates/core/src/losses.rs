//! Training objectives: L1, SSIM, total variation, coefficient smoothness and
//! a least-squares patch discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Axis, Backend, Conv2d, Eager, LayerInfo, ParamStore, Tensor, LEAKY_SLOPE};
use crate::error::{arg_err, config_err, shape_err, Result};
use crate::imageio::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn same_shape<B: Backend>(b: &B, x: &B::V, y: &B::V, what: &str) -> Result<()> {
    let (sx, sy) = (b.shape(x), b.shape(y));
    if sx != sy {
        return Err(shape_err!("{what}: shapes differ, {sx:?} vs {sy:?}"));
    }
    Ok(())
}

pub fn l1_loss<B: Backend>(b: &mut B, x: &B::V, y: &B::V) -> Result<B::V> {
    same_shape(b, x, y, "l1")?;
    let d = b.sub(x, y)?;
    let d = b.abs(&d);
    Ok(b.mean(&d))
}

/// Mean SSIM over all valid 11×11 windows and channels.
pub fn ssim_index<B: Backend>(b: &mut B, x: &B::V, y: &B::V) -> Result<B::V> {
    same_shape(b, x, y, "ssim")?;
    let s = b.shape(x);
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(arg_err!(
            "ssim needs extents of at least {SSIM_WINDOW}, got {}×{}",
            s.h,
            s.w
        ));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mx = b.blur_valid(x, &k)?;
    let my = b.blur_valid(y, &k)?;
    let xx = b.square(x);
    let yy = b.square(y);
    let xy = b.mul(x, y)?;
    let exx = b.blur_valid(&xx, &k)?;
    let eyy = b.blur_valid(&yy, &k)?;
    let exy = b.blur_valid(&xy, &k)?;
    let mx2 = b.square(&mx);
    let my2 = b.square(&my);
    let mxy = b.mul(&mx, &my)?;
    let vx = b.sub(&exx, &mx2)?;
    let vy = b.sub(&eyy, &my2)?;
    let cxy = b.sub(&exy, &mxy)?;

    let n1 = b.scale(&mxy, 2.0);
    let n1 = b.add_scalar(&n1, SSIM_C1);
    let n2 = b.scale(&cxy, 2.0);
    let n2 = b.add_scalar(&n2, SSIM_C2);
    let d1 = b.add(&mx2, &my2)?;
    let d1 = b.add_scalar(&d1, SSIM_C1);
    let d2 = b.add(&vx, &vy)?;
    let d2 = b.add_scalar(&d2, SSIM_C2);
    let num = b.mul(&n1, &n2)?;
    let den = b.mul(&d1, &d2)?;
    let map = b.div(&num, &den)?;
    Ok(b.mean(&map))
}

pub fn ssim_loss<B: Backend>(b: &mut B, x: &B::V, y: &B::V) -> Result<B::V> {
    let s = ssim_index(b, x, y)?;
    let neg = b.scale(&s, -1.0);
    Ok(b.add_scalar(&neg, 1.0))
}

/// SSIM of two images, evaluated in double precision.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_extent(b) {
        return Err(shape_err!("ssim: image extents differ"));
    }
    let mut e = Eager::<f64>::new();
    let x = e.constant(&a.to_tensor());
    let y = e.constant(&b.to_tensor());
    Ok(ssim_index(&mut e, &x, &y)?.item())
}

/// Mean squared forward difference along height plus the same along width.
pub fn tv_loss<B: Backend>(b: &mut B, x: &B::V) -> Result<B::V> {
    let mut terms = Vec::with_capacity(2);
    for axis in [Axis::Height, Axis::Width] {
        let d = b.forward_diff(x, axis)?;
        let d = b.square(&d);
        terms.push(b.mean(&d));
    }
    b.add(&terms[0], &terms[1])
}

pub fn smoothness_reg<B: Backend>(b: &mut B, alpha: &B::V, beta: &B::V) -> Result<B::V> {
    let ta = tv_loss(b, alpha)?;
    let tb = tv_loss(b, beta)?;
    b.add(&ta, &tb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![16, 32, 64, 64],
            seed: 23,
        }
    }
}

/// Patch classifier: three stride-2 and one stride-1 4×4 convs with leaky
/// ReLU, then a 4×4 conv to one score channel. Receptive field 70×70.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(config: &DiscriminatorConfig) -> Result<Self> {
        if config.widths.len() != 4 || config.widths.contains(&0) {
            return Err(config_err!("discriminator needs four positive widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            let stride = if i < 3 { 2 } else { 1 };
            convs.push(Conv2d::new(
                &mut store,
                &mut rng,
                &format!("disc.{i}"),
                cin,
                w,
                4,
                stride,
                1,
            )?);
            cin = w;
        }
        convs.push(Conv2d::new(&mut store, &mut rng, "disc.out", cin, 1, 4, 1, 1)?);
        Ok(Discriminator {
            config: config.clone(),
            store,
            convs,
        })
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.convs.iter().map(|c| c.info.clone()).collect()
    }

    /// Receptive field of one output score, in input pixels.
    pub fn receptive_field(&self) -> usize {
        self.convs.iter().rev().fold(1, |r, c| (r - 1) * c.stride + 4)
    }

    /// Score map (N, 1, h, w).
    pub fn forward<B: Backend>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        b.push_scope("disc");
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(b, params, &h)?;
            if i + 1 < self.convs.len() {
                h = b.leaky_relu(&h, LEAKY_SLOPE);
            }
        }
        b.pop_scope();
        Ok(h)
    }
}

fn mean_sq_offset<B: Backend>(b: &mut B, s: &B::V, target: f64) -> B::V {
    let d = b.add_scalar(s, -target);
    let d = b.square(&d);
    b.mean(&d)
}

/// Discriminator objective `½·mean((D(real)−1)²) + ½·mean(D(fake)²)`. The
/// fake batch is detached.
pub fn discriminator_loss<B: Backend>(
    b: &mut B,
    disc: &Discriminator,
    params: &[B::V],
    real: &B::V,
    fake: &B::V,
) -> Result<B::V> {
    same_shape(b, real, fake, "adversarial")?;
    let fake = b.detach(fake);
    let sr = disc.forward(b, params, real)?;
    let sf = disc.forward(b, params, &fake)?;
    let lr = mean_sq_offset(b, &sr, 1.0);
    let lf = mean_sq_offset(b, &sf, 0.0);
    let total = b.add(&lr, &lf)?;
    Ok(b.scale(&total, 0.5))
}

/// Generator objective `mean((D(fake)−1)²)`.
pub fn generator_loss<B: Backend>(b: &mut B, disc: &Discriminator, params: &[B::V], fake: &B::V) -> Result<B::V> {
    let sf = disc.forward(b, params, fake)?;
    Ok(mean_sq_offset(b, &sf, 1.0))
}

/// `(d_loss, g_loss)`; gradients of `g_loss` reach only `fake`.
pub fn adversarial_losses<B: Backend>(
    b: &mut B,
    disc: &Discriminator,
    params: &[B::V],
    real: &B::V,
    fake: &B::V,
) -> Result<(B::V, B::V)> {
    let d = discriminator_loss(b, disc, params, real, fake)?;
    let g = generator_loss(b, disc, params, fake)?;
    Ok((d, g))
}

/// Weights of the composite objective, in the order L1, SSIM, TV,
/// adversarial, coefficient smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub tv: f64,
    pub adv: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            ssim: 0.5,
            tv: 0.01,
            adv: 0.05,
            reg: 0.01,
        }
    }
}

impl LossWeights {
    /// No adversarial term; smoothness regularization retained.
    pub fn finetune() -> Self {
        LossWeights {
            adv: 0.0,
            ..Self::default()
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.l1, self.ssim, self.tv, self.adv, self.reg]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(config_err!("loss weights must be finite and nonnegative: {self:?}"))
        }
    }

    /// Weighted sum of plain component values.
    pub fn total(&self, parts: &[f64; 5]) -> f64 {
        self.as_array().iter().zip(parts).map(|(w, p)| w * p).sum()
    }
}

/// Unweighted loss components; absent terms are `None`.
#[derive(Clone, Debug)]
pub struct LossParts<V> {
    pub l1: Option<V>,
    pub ssim: Option<V>,
    pub tv: Option<V>,
    pub adv: Option<V>,
    pub reg: Option<V>,
}

impl<V> Default for LossParts<V> {
    fn default() -> Self {
        LossParts {
            l1: None,
            ssim: None,
            tv: None,
            adv: None,
            reg: None,
        }
    }
}

impl<V> LossParts<V> {
    fn slots(&self) -> [&Option<V>; 5] {
        [&self.l1, &self.ssim, &self.tv, &self.adv, &self.reg]
    }
}

/// `Σ λᵢ·partᵢ` over present parts with nonzero weight.
pub fn composite_loss<B: Backend>(b: &mut B, weights: &LossWeights, parts: &LossParts<B::V>) -> Result<B::V> {
    let mut total: Option<B::V> = None;
    for (w, part) in weights.as_array().into_iter().zip(parts.slots()) {
        let Some(p) = part else { continue };
        if w == 0.0 {
            continue;
        }
        let term = b.scale(p, w);
        total = Some(match total {
            None => term,
            Some(t) => b.add(&t, &term)?,
        });
    }
    Ok(total.unwrap_or_else(|| b.constant(&Tensor::scalar(0.0))))
}

/// Where the adversarial term comes from, if any.
pub struct AdvInput<'a, V> {
    pub disc: &'a Discriminator,
    pub params: &'a [V],
}

/// Generator objective for an output/target pair, optionally with
/// coefficient maps and a discriminator. Terms with zero weight are not
/// evaluated.
pub fn generator_objective<B: Backend>(
    b: &mut B,
    weights: &LossWeights,
    output: &B::V,
    target: &B::V,
    maps: Option<&(B::V, B::V)>,
    adv: Option<AdvInput<'_, B::V>>,
) -> Result<(B::V, LossParts<B::V>)> {
    let mut parts = LossParts::default();
    if weights.l1 != 0.0 {
        parts.l1 = Some(l1_loss(b, output, target)?);
    }
    if weights.ssim != 0.0 {
        parts.ssim = Some(ssim_loss(b, output, target)?);
    }
    if weights.tv != 0.0 {
        parts.tv = Some(tv_loss(b, output)?);
    }
    if weights.adv != 0.0 {
        if let Some(a) = adv {
            parts.adv = Some(generator_loss(b, a.disc, a.params, output)?);
        }
    }
    if weights.reg != 0.0 {
        if let Some((alpha, beta)) = maps {
            parts.reg = Some(smoothness_reg(b, alpha, beta)?);
        }
    }
    let total = composite_loss(b, weights, &parts)?;
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Graph, Shape};

    fn t(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 1, h, w), |[_, _, y, x]| f(y, x))
    }

    fn eval(f: impl FnOnce(&mut Eager<f64>) -> Result<std::rc::Rc<Tensor<f64>>>) -> f64 {
        let mut e = Eager::<f64>::new();
        f(&mut e).unwrap().item()
    }

    #[test]
    fn l1_of_constants() {
        let v = eval(|e| {
            let a = e.wrap(t(3, 3, |_, _| 0.2));
            let b = e.wrap(t(3, 3, |_, _| 0.5));
            l1_loss(e, &a, &b)
        });
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn l1_rejects_mismatched_shapes() {
        let mut e = Eager::<f64>::new();
        let a = e.wrap(t(3, 3, |_, _| 0.0));
        let b = e.wrap(t(3, 4, |_, _| 0.0));
        assert!(l1_loss(&mut e, &a, &b).is_err());
    }

    #[test]
    fn tv_of_two_by_two() {
        let v = eval(|e| {
            let x = e.wrap(t(2, 2, |_, x| x as f64));
            tv_loss(e, &x)
        });
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ssim_self_is_one() {
        let img = ImageBuffer::from_fn(16, 16, 3, |y, x, c| ((y * 13 + x * 7 + c) % 11) as f32 / 10.0);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
        let small = ImageBuffer::filled(8, 20, 1, 0.5);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn composite_matches_hand_sum() {
        let w = LossWeights::default();
        assert!((w.total(&[0.1, 0.2, 0.3, 0.4, 0.5]) - 0.228).abs() < 1e-12);
        let mut e = Eager::<f64>::new();
        let parts = LossParts {
            l1: Some(e.wrap(Tensor::scalar(0.1))),
            ssim: Some(e.wrap(Tensor::scalar(0.2))),
            tv: Some(e.wrap(Tensor::scalar(0.3))),
            adv: Some(e.wrap(Tensor::scalar(0.4))),
            reg: Some(e.wrap(Tensor::scalar(0.5))),
        };
        let v = composite_loss(&mut e, &w, &parts).unwrap().item();
        assert!((v - 0.228).abs() < 1e-12);
    }

    #[test]
    fn discriminator_has_seventy_pixel_field() {
        let d = Discriminator::new(&DiscriminatorConfig::default()).unwrap();
        assert_eq!(d.receptive_field(), 70);
        let mut e = Eager::<f32>::new();
        let p = d.store.bind(&mut e, false);
        let x = e.wrap(Tensor::zeros(Shape::new(1, 3, 128, 128)));
        let s = d.forward(&mut e, &p, &x).unwrap();
        assert_eq!(s.shape(), Shape::new(1, 1, 14, 14));
    }

    #[test]
    fn generator_loss_ignores_real_pixels() {
        let d = Discriminator::new(&DiscriminatorConfig {
            widths: vec![2, 2, 2, 2],
            seed: 1,
        })
        .unwrap();
        let mut g = Graph::<f64>::new();
        let p = d.store.bind(&mut g, false);
        let real = g.leaf(Tensor::full(Shape::new(1, 3, 32, 32), 0.8), true);
        let fake = g.leaf(Tensor::full(Shape::new(1, 3, 32, 32), 0.3), true);
        let (_, gl) = adversarial_losses(&mut g, &d, &p, &real, &fake).unwrap();
        g.backward(gl).unwrap();
        assert!(g.grad(real).is_none_or(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(g.grad(fake).is_some());
    }
}
