use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::buffer::{ImageBuffer, GRAY_WEIGHTS};
use crate::diffcore::{Backend, Eager, Shape, Tensor};
use crate::error::{arg_err, config_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Brightness,
    Contrast,
    Saturation,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Brightness, FilterKind::Contrast, FilterKind::Saturation];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Brightness => "brightness",
            FilterKind::Contrast => "contrast",
            FilterKind::Saturation => "saturation",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown filter {s:?}"))
    }
}

/// Brightness, contrast and saturation parameters, each in (−1, 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl ParamSet {
    pub fn new(brightness: f64, contrast: f64, saturation: f64) -> Result<Self> {
        let p = ParamSet {
            brightness,
            contrast,
            saturation,
        };
        for k in FilterKind::ALL {
            check_param(p.get(k))?;
        }
        Ok(p)
    }

    pub fn get(&self, kind: FilterKind) -> f64 {
        match kind {
            FilterKind::Brightness => self.brightness,
            FilterKind::Contrast => self.contrast,
            FilterKind::Saturation => self.saturation,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.brightness, self.contrast, self.saturation]
    }
}

fn check_param(p: f64) -> Result<()> {
    if p.is_finite() && p > -1.0 && p < 1.0 {
        Ok(())
    } else {
        Err(arg_err!("filter parameter must lie in (-1, 1), got {p}"))
    }
}

/// Per-pixel luminance, (N, 1, H, W). Single-channel input is returned as is.
pub fn gray<B: Backend>(b: &mut B, x: &B::V) -> Result<B::V> {
    match b.shape(x).c {
        1 => Ok(x.clone()),
        3 => {
            let w = Tensor::new(Shape::new(1, 3, 1, 1), GRAY_WEIGHTS.to_vec())?;
            let w = b.constant(&w);
            b.conv2d(x, &w, None, 1, 0)
        }
        c => Err(shape_err!("gray needs 1 or 3 channels, got {c}")),
    }
}

/// Differentiable filter on a batch `x` with per-sample parameter `p` of
/// shape (N, 1, 1, 1) or (1, 1, 1, 1).
///
/// Every kind is written as `v + p·d(v)`, so `p = 0` returns `x` exactly.
pub fn filter<B: Backend>(b: &mut B, x: &B::V, kind: FilterKind, p: &B::V) -> Result<B::V> {
    let delta = match kind {
        FilterKind::Brightness => x.clone(),
        FilterKind::Contrast => {
            let g = gray(b, x)?;
            let mu = b.global_avg_pool(&g);
            b.sub(x, &mu)?
        }
        FilterKind::Saturation => {
            let g = gray(b, x)?;
            b.sub(x, &g)?
        }
    };
    let step = b.mul(&delta, p)?;
    let out = b.add(x, &step)?;
    Ok(b.clamp01(&out))
}

pub fn apply_filter(img: &ImageBuffer, kind: FilterKind, p: f64) -> Result<ImageBuffer> {
    check_param(p)?;
    let mut b = Eager::<f32>::new();
    let x = b.constant(&img.to_tensor());
    let p = b.constant(&Tensor::scalar(p as f32));
    let y = filter(&mut b, &x, kind, &p)?;
    ImageBuffer::from_tensor(&y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |_, _, _| rng.gen())
    }

    #[test]
    fn zero_parameter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 9, 11);
        for k in FilterKind::ALL {
            assert_eq!(apply_filter(&img, k, 0.0).unwrap(), img, "{k}");
        }
    }

    #[test]
    fn brightness_scales_pixel() {
        let img = ImageBuffer::filled(1, 1, 3, 0.5);
        let out = apply_filter(&img, FilterKind::Brightness, 0.2).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn full_desaturation_gives_gray() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 4, 5);
        let p = -1.0 + f64::EPSILON;
        let out = apply_filter(&img, FilterKind::Saturation, p).unwrap();
        let g = img.to_gray().unwrap();
        for (px, gv) in out.data().chunks(3).zip(g.data()) {
            for v in px {
                assert!((v - gv).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_of_range_parameter_is_rejected() {
        let img = ImageBuffer::filled(2, 2, 3, 0.5);
        for p in [1.0, -1.0, 3.0, f64::NAN] {
            assert!(apply_filter(&img, FilterKind::Contrast, p).is_err());
        }
        assert!(ParamSet::new(0.0, 0.5, 1.2).is_err());
    }

    #[test]
    fn contrast_keeps_mean_luminance() {
        // mid-range values so nothing clamps
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImageBuffer::from_fn(8, 8, 3, |_, _, _| rng.gen_range(0.4..0.6));
        let out = apply_filter(&img, FilterKind::Contrast, 0.7).unwrap();
        let before = img.to_gray().unwrap().mean();
        let after = out.to_gray().unwrap().mean();
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn kind_parses_from_name() {
        assert_eq!("contrast".parse::<FilterKind>().unwrap(), FilterKind::Contrast);
        assert!("gamma".parse::<FilterKind>().is_err());
    }
}
