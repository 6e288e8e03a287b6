use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::imageio::ImageBuffer;

/// Fractions of 2-D power-spectrum energy. Frequencies are in cycles per
/// pixel; "high" means at least a quarter cycle (half the Nyquist rate).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub dc_fraction: f64,
    /// High horizontal frequency, low vertical frequency.
    pub horiz_band: f64,
    /// High vertical frequency, low horizontal frequency.
    pub vert_band: f64,
    /// Radial frequency at or above a quarter cycle.
    pub high_freq_fraction: f64,
    /// Σ|F|² over the spectrum.
    pub total_energy: f64,
}

pub const HIGH_FREQ: f64 = 0.25;

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

pub fn power_spectrum(img: &ImageBuffer) -> Vec<f64> {
    let g = if img.channels() == 3 {
        img.to_gray().expect("rgb")
    } else {
        img.clone()
    };
    let (h, w) = (g.height(), g.width());
    let mut data: Vec<Complex<f64>> = g.data().iter().map(|v| Complex::new(*v as f64, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
    data.iter().map(|c| c.norm_sqr()).collect()
}

pub fn spectral_profile(img: &ImageBuffer) -> SpectralProfile {
    let (h, w) = (img.height(), img.width());
    let p = power_spectrum(img);
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return SpectralProfile::default();
    }
    let mut prof = SpectralProfile {
        total_energy: total,
        ..Default::default()
    };
    for v in 0..h {
        let fv = signed_freq(v, h);
        for u in 0..w {
            let fu = signed_freq(u, w);
            let e = p[v * w + u];
            if u == 0 && v == 0 {
                prof.dc_fraction += e;
            }
            let (hu, hv) = (fu.abs() >= HIGH_FREQ, fv.abs() >= HIGH_FREQ);
            if hu && !hv {
                prof.horiz_band += e;
            }
            if hv && !hu {
                prof.vert_band += e;
            }
            if fu.hypot(fv) >= HIGH_FREQ {
                prof.high_freq_fraction += e;
            }
        }
    }
    prof.dc_fraction /= total;
    prof.horiz_band /= total;
    prof.vert_band /= total;
    prof.high_freq_fraction /= total;
    prof
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_all_dc() {
        let p = spectral_profile(&ImageBuffer::filled(16, 12, 1, 0.6));
        assert!((p.dc_fraction - 1.0).abs() < 1e-12);
        assert!(p.horiz_band.abs() < 1e-12 && p.vert_band.abs() < 1e-12 && p.high_freq_fraction.abs() < 1e-12);
    }

    #[test]
    fn vertical_stripes_are_horizontal_frequency() {
        let img = ImageBuffer::from_fn(32, 32, 1, |_, x, _| if x % 4 < 2 { 1.0 } else { 0.0 });
        let p = spectral_profile(&img);
        assert!(p.horiz_band > p.vert_band);
        assert!(p.horiz_band > 0.4);
    }

    #[test]
    fn parseval_holds() {
        let img = ImageBuffer::from_fn(10, 14, 1, |y, x, _| ((y * 7 + x * 3) % 5) as f32 / 4.0);
        let p = spectral_profile(&img);
        let spatial: f64 = img.data().iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((p.total_energy / 140.0 - spatial).abs() < 1e-9 * spatial);
        assert!(p.dc_fraction + p.horiz_band + p.vert_band <= 1.0 + 1e-12);
    }
}
