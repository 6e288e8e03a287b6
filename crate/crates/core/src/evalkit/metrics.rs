use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectral::{spectral_profile, SpectralProfile};
use crate::error::{shape_err, Error, Result};
use crate::imageio::ImageBuffer;
use crate::losses::ssim;
use crate::synthdoc::DatasetManifest;

pub const PSNR_CAP: f64 = 99.0;
/// MSE below which images count as identical.
pub const PSNR_MSE_FLOOR: f64 = 1e-9;

/// Peak signal-to-noise ratio for unit dynamic range, capped at 99 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_extent(b) {
        return Err(shape_err!("psnr: image extents differ"));
    }
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub ssim: f64,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectral: Option<SpectralProfile>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean_ssim: f64,
    pub median_ssim: f64,
    pub mean_psnr: f64,
    pub median_psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub summary: Summary,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

impl MetricReport {
    pub fn from_rows(rows: Vec<ImageMetrics>) -> Self {
        let s: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        let summary = Summary {
            count: rows.len(),
            mean_ssim: mean(&s),
            median_ssim: median(&s),
            mean_psnr: mean(&p),
            median_psnr: median(&p),
        };
        MetricReport { rows, summary }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-image rows, a blank line, then `mean` and `median` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,ssim,psnr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.4}\n", r.name, r.ssim, r.psnr));
        }
        let s = &self.summary;
        out.push('\n');
        out.push_str(&format!("mean,{:.6},{:.4}\n", s.mean_ssim, s.mean_psnr));
        out.push_str(&format!("median,{:.6},{:.4}\n", s.median_ssim, s.median_psnr));
        out
    }

    pub fn write(&self, json: Option<&Path>, csv: Option<&Path>) -> Result<()> {
        if let Some(p) = json {
            fs::write(p, self.to_json()).map_err(|e| Error::io(p, e))?;
        }
        if let Some(p) = csv {
            fs::write(p, self.to_csv()).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

pub fn image_metrics(
    name: &str,
    output: &ImageBuffer,
    reference: &ImageBuffer,
    spectral: bool,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        name: name.to_string(),
        ssim: ssim(output, reference)?,
        psnr: psnr(output, reference)?,
        spectral: spectral.then(|| spectral_profile(output)),
    })
}

/// Enhances every degraded image of `manifest` and scores it against its
/// clean counterpart. Rows keep manifest order.
pub fn evaluate_pairs<F>(manifest: &DatasetManifest, enhancer: F, spectral: bool) -> Result<MetricReport>
where
    F: Fn(&ImageBuffer) -> Result<ImageBuffer> + Sync,
{
    let rows = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let (degraded, clean) = manifest.load_pair(i)?;
            let out = enhancer(&degraded)?;
            image_metrics(&manifest.rows[i].degraded, &out, &clean, spectral)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_mse() {
        let a = ImageBuffer::filled(4, 4, 1, 0.5);
        let b = ImageBuffer::filled(4, 4, 1, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_rejects_mismatch() {
        let a = ImageBuffer::filled(4, 4, 1, 0.5);
        let b = ImageBuffer::filled(4, 5, 1, 0.5);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn summary_recomputes_from_rows() {
        let rows = [0.5, 0.9, 0.7]
            .iter()
            .enumerate()
            .map(|(i, s)| ImageMetrics {
                name: format!("{i}"),
                ssim: *s,
                psnr: 20.0 + i as f64,
                spectral: None,
            })
            .collect();
        let r = MetricReport::from_rows(rows);
        assert_eq!(r.summary.median_ssim, 0.7);
        assert!((r.summary.mean_psnr - 21.0).abs() < 1e-12);
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
