use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, Error, Result};
use crate::imageio::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeKind {
    Shadow,
    WrinkleShading,
    ColorCast,
    BleedThrough,
    Blur,
    Noise,
}

impl DegradeKind {
    /// Pipeline order.
    pub const ORDER: [DegradeKind; 6] = [
        DegradeKind::Shadow,
        DegradeKind::WrinkleShading,
        DegradeKind::ColorCast,
        DegradeKind::BleedThrough,
        DegradeKind::Blur,
        DegradeKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradeKind::Shadow => "shadow",
            DegradeKind::WrinkleShading => "wrinkle_shading",
            DegradeKind::ColorCast => "color_cast",
            DegradeKind::BleedThrough => "bleed_through",
            DegradeKind::Blur => "blur",
            DegradeKind::Noise => "noise",
        }
    }
}

impl fmt::Display for DegradeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradeKind::ORDER
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown degradation {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeConfig {
    pub intensity: f64,
    pub seed: u64,
    pub shadow: bool,
    pub blur: bool,
    pub noise: bool,
    pub color_cast: bool,
    pub bleed_through: bool,
    pub wrinkle_shading: bool,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            intensity: 0.5,
            seed: 0,
            shadow: true,
            blur: true,
            noise: true,
            color_cast: true,
            bleed_through: true,
            wrinkle_shading: true,
        }
    }
}

impl DegradeConfig {
    pub fn enabled(&self, kind: DegradeKind) -> bool {
        match kind {
            DegradeKind::Shadow => self.shadow,
            DegradeKind::WrinkleShading => self.wrinkle_shading,
            DegradeKind::ColorCast => self.color_cast,
            DegradeKind::BleedThrough => self.bleed_through,
            DegradeKind::Blur => self.blur,
            DegradeKind::Noise => self.noise,
        }
    }
}

/// Gaussian blur with mirrored borders; `sigma ≤ 0` is the identity.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, k) in taps.iter().enumerate() {
                    let sx = mirror(x as isize + t as isize - r, w);
                    acc += k * img.get(y, sx, ch) as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, k) in taps.iter().enumerate() {
                    let sy = mirror(y as isize + t as isize - r, h);
                    acc += k * tmp[(sy * w + x) * c + ch];
                }
                out.set(y, x, ch, acc as f32);
            }
        }
    }
    out
}

/// Map in [0, 1] varying smoothly across the page: a soft edge at a random
/// angle and offset.
fn soft_edge(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let offset: f64 = rng.gen_range(-0.3..0.3);
    let width: f64 = rng.gen_range(0.08..0.35);
    let (dy, dx) = angle.sin_cos();
    let mut map = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = (y as f64 + 0.5) / h as f64 - 0.5;
            let v = (x as f64 + 0.5) / w as f64 - 0.5;
            let t = (u * dy + v * dx - offset) / width;
            map.push(0.5 * (1.0 + t.tanh()));
        }
    }
    map
}

/// One degradation at `strength` ∈ [0, 1]. Every kind draws the same number
/// of random values for a given image size whatever the strength.
pub fn degrade_stage(img: &ImageBuffer, kind: DegradeKind, strength: f64, rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(arg_err!("degradation strength must lie in [0, 1], got {strength}"));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let out = match kind {
        DegradeKind::Shadow => {
            let edge = soft_edge(rng, h, w);
            if strength == 0.0 {
                return Ok(img.clone());
            }
            let mut out = img.clone();
            for (i, px) in out.data_mut().chunks_mut(c).enumerate() {
                let m = 1.0 - 0.6 * strength * edge[i];
                px.iter_mut().for_each(|v| *v = (*v as f64 * m) as f32);
            }
            out
        }
        DegradeKind::WrinkleShading => {
            let waves: Vec<[f64; 4]> = (0..3)
                .map(|_| {
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let cycles: f64 = rng.gen_range(1.0..4.0);
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let weight: f64 = rng.gen_range(0.5..1.0);
                    [angle, cycles, phase, weight]
                })
                .collect();
            if strength == 0.0 {
                return Ok(img.clone());
            }
            let norm: f64 = waves.iter().map(|v| v[3]).sum();
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    let u = y as f64 / h as f64;
                    let v = x as f64 / w as f64;
                    let s: f64 = waves
                        .iter()
                        .map(|[a, f, p, wt]| {
                            let (sa, ca) = a.sin_cos();
                            wt * (std::f64::consts::TAU * f * (u * sa + v * ca) + p).sin()
                        })
                        .sum::<f64>()
                        / norm;
                    let delta = 0.15 * strength * s;
                    for ch in 0..c {
                        let nv = (out.get(y, x, ch) as f64 + delta).clamp(0.0, 1.0);
                        out.set(y, x, ch, nv as f32);
                    }
                }
            }
            out
        }
        DegradeKind::ColorCast => {
            let unit: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
            if strength == 0.0 {
                return Ok(img.clone());
            }
            let mut out = img.clone();
            for px in out.data_mut().chunks_mut(c) {
                for (ch, v) in px.iter_mut().enumerate() {
                    let gain = 1.0 + 0.25 * strength * unit[ch];
                    *v = (*v as f64 * gain).clamp(0.0, 1.0) as f32;
                }
            }
            out
        }
        DegradeKind::BleedThrough => {
            if strength == 0.0 {
                return Ok(img.clone());
            }
            let mirrored = ImageBuffer::from_fn(h, w, c, |y, x, ch| img.get(y, w - 1 - x, ch));
            let ghost = gaussian_blur(&mirrored, 1.5);
            let a = 0.3 * strength;
            let mut out = img.clone();
            for (v, g) in out.data_mut().iter_mut().zip(ghost.data()) {
                *v = ((1.0 - a) * *v as f64 + a * *g as f64) as f32;
            }
            out
        }
        DegradeKind::Blur => gaussian_blur(img, 2.0 * strength),
        DegradeKind::Noise => {
            let sigma = 0.08 * strength;
            let mut out = img.clone();
            for v in out.data_mut() {
                let n: f64 = rng.sample(StandardNormal);
                if strength > 0.0 {
                    *v = (*v as f64 + sigma * n).clamp(0.0, 1.0) as f32;
                }
            }
            out
        }
    };
    Ok(out)
}

/// Enabled stages in pipeline order, each at a strength drawn from
/// [intensity/2, intensity].
pub fn degrade(img: &ImageBuffer, cfg: &DegradeConfig) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&cfg.intensity) {
        return Err(arg_err!("intensity must lie in [0, 1], got {}", cfg.intensity));
    }
    if cfg.intensity == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = img.clone();
    for kind in DegradeKind::ORDER {
        let jitter: f64 = rng.gen_range(0.5..=1.0);
        if !cfg.enabled(kind) {
            continue;
        }
        out = degrade_stage(&out, kind, (jitter * cfg.intensity).min(1.0), &mut rng)?;
    }
    Ok(out)
}
