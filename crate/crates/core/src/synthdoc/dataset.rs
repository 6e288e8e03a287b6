use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade, DegradeConfig};
use super::render::render_document;
use crate::error::{arg_err, config_err, shape_err, Error, Result};
use crate::imageio::{load_image, save_image, ImageBuffer};

/// One manifest line. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub degraded: String,
    pub clean: String,
    pub seed: u64,
    pub intensity: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let expected = ["degraded", "clean", "seed", "intensity", "width", "height"];
        if headers.iter().ne(expected) {
            return Err(Error::Parse(format!(
                "{}: manifest header must be {}",
                path.display(),
                expected.join(",")
            )));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Ok(DatasetManifest {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["degraded", "clean", "seed", "intensity", "width", "height"])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads the (degraded, clean) pair of row `i`.
    pub fn load_pair(&self, i: usize) -> Result<(ImageBuffer, ImageBuffer)> {
        let row = self.rows.get(i).ok_or_else(|| arg_err!("manifest has no row {i}"))?;
        let degraded = load_image(self.resolve(&row.degraded)).map_err(|e| row_error(i, e))?;
        let clean = load_image(self.resolve(&row.clean)).map_err(|e| row_error(i, e))?;
        if !degraded.same_extent(&clean) {
            return Err(shape_err!("manifest row {i}: pair extents differ"));
        }
        Ok((degraded, clean))
    }

    pub fn load_all(&self) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
        (0..self.len()).into_par_iter().map(|i| self.load_pair(i)).collect()
    }
}

fn row_error(i: usize, e: Error) -> Error {
    match e {
        Error::NotFound(p) => Error::NotFound(PathBuf::from(format!("{} (manifest row {i})", p.display()))),
        other => other,
    }
}

/// In-memory sample with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub degraded: ImageBuffer,
    pub clean: ImageBuffer,
    pub seed: u64,
    pub intensity: f64,
}

/// Seed of sample `index` under `root`: its own generator stream, so serial
/// and parallel builds agree.
pub fn sample_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn make_sample(root: u64, index: u64, size: usize, intensity: (f64, f64), base: &DegradeConfig) -> Result<Sample> {
    let seed = sample_seed(root, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensity = if intensity.0 == intensity.1 {
        intensity.0
    } else {
        rng.gen_range(intensity.0..=intensity.1)
    };
    let clean = render_document(rng.next_u64(), size, size)?;
    let cfg = DegradeConfig {
        intensity,
        seed: rng.next_u64(),
        ..base.clone()
    };
    let degraded = degrade(&clean, &cfg)?;
    Ok(Sample {
        degraded,
        clean,
        seed,
        intensity,
    })
}

fn check_range(range: (f64, f64)) -> Result<()> {
    if !(0.0 <= range.0 && range.0 <= range.1 && range.1 <= 1.0) {
        return Err(config_err!(
            "intensity range must satisfy 0 ≤ lo ≤ hi ≤ 1, got {range:?}"
        ));
    }
    Ok(())
}

/// `n` seeded pairs generated in parallel, in index order.
pub fn generate_samples(n: usize, size: usize, intensity: (f64, f64), root: u64) -> Result<Vec<Sample>> {
    check_range(intensity)?;
    let base = DegradeConfig::default();
    (0..n as u64)
        .into_par_iter()
        .map(|i| make_sample(root, i, size, intensity, &base))
        .collect()
}

/// Writes `n` clean/degraded PNG pairs and `manifest.csv` into `out_dir`.
pub fn build_dataset(
    n: usize,
    out_dir: impl AsRef<Path>,
    size: usize,
    intensity: (f64, f64),
    root: u64,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(arg_err!("dataset needs at least one sample"));
    }
    check_range(intensity)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let base = DegradeConfig::default();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| -> Result<ManifestRow> {
            let s = make_sample(root, i as u64, size, intensity, &base)?;
            let degraded = format!("degraded_{i:05}.png");
            let clean = format!("clean_{i:05}.png");
            save_image(&s.degraded, out_dir.join(&degraded))?;
            save_image(&s.clean, out_dir.join(&clean))?;
            Ok(ManifestRow {
                degraded,
                clean,
                seed: s.seed,
                intensity: s.intensity,
                width: size,
                height: size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        rows,
    };
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_writes_rows_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(4, dir.path(), 64, (0.3, 0.6), 42).unwrap();
        assert_eq!(m.len(), 4);
        let pngs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count();
        assert_eq!(pngs, 8);
        let loaded = DatasetManifest::load(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.rows, m.rows);
        for (i, row) in loaded.rows.iter().enumerate() {
            assert!((0.3..=0.6).contains(&row.intensity));
            let (d, c) = loaded.load_pair(i).unwrap();
            assert!(d.same_extent(&c));
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_dataset(2, a.path(), 64, (0.5, 0.5), 7).unwrap();
        build_dataset(2, b.path(), 64, (0.5, 0.5), 7).unwrap();
        for name in ["manifest.csv", "clean_00001.png", "degraded_00001.png"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_pair_names_the_row() {
        let m = DatasetManifest {
            root: PathBuf::from("/nonexistent"),
            rows: vec![ManifestRow {
                degraded: "d.png".into(),
                clean: "c.png".into(),
                seed: 0,
                intensity: 0.5,
                width: 64,
                height: 64,
            }],
        };
        let err = m.load_pair(0).unwrap_err().to_string();
        assert!(err.contains("row 0"), "{err}");
    }
}
