use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Phase};
use super::config::{Config, StageOrder};
use crate::diffcore::{Backend, GradBuffer, Graph, Var};
use crate::error::{config_err, Error, Result};
use crate::imageio::ImageBuffer;
use crate::losses::{discriminator_loss, generator_objective, AdvInput, LossParts, LossWeights};
use crate::synthdoc::DatasetManifest;

/// A (degraded, clean) training pair.
pub type Pair = (ImageBuffer, ImageBuffer);

/// One optimizer step: batch means of the unweighted components that were
/// evaluated, and of the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l1: Option<f64>,
    pub ssim: Option<f64>,
    pub tv: Option<f64>,
    pub adv: Option<f64>,
    pub reg: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

pub fn write_loss_log(path: impl AsRef<Path>, log: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in log {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Loads every pair of a manifest as RGB.
pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<Pair>> {
    Ok(manifest
        .load_all()?
        .into_iter()
        .map(|(d, c)| (d.to_rgb(), c.to_rgb()))
        .collect())
}

/// Stateful trainer for one phase. Each step draws its samples and crops
/// from a generator keyed by (seed, phase, step), so runs are reproducible
/// and resumable.
pub struct Trainer<'a> {
    ck: Checkpoint,
    data: &'a [Pair],
    phase: Phase,
    weights: LossWeights,
    global_cache: Vec<Option<ImageBuffer>>,
    phase_step: u64,
    log: Vec<LossRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(mut ck: Checkpoint, data: &'a [Pair], phase: Phase, cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        ck.ensure_compatible(cfg)?;
        if data.is_empty() {
            return Err(config_err!("training set is empty"));
        }
        if data
            .iter()
            .any(|(d, c)| !d.same_extent(c) || d.channels() != 3 || c.channels() != 3)
        {
            return Err(config_err!("training pairs must be RGB images of matching extent"));
        }
        let weights = match phase {
            Phase::Gpp => LossWeights {
                tv: 0.0,
                adv: 0.0,
                reg: 0.0,
                ..cfg.train.weights
            },
            Phase::Joint => cfg.train.weights,
            Phase::Finetune => LossWeights {
                adv: 0.0,
                ..cfg.train.finetune_weights
            },
            Phase::Init => return Err(config_err!("cannot train in the init phase")),
        };
        if phase != Phase::Gpp {
            let m = cfg.dblrnet.required_multiple(1);
            if let Some((d, _)) = data.iter().find(|(d, _)| d.height().min(d.width()) < m) {
                return Err(config_err!(
                    "training image {}×{} is smaller than the refinement minimum {m}",
                    d.height(),
                    d.width()
                ));
            }
        }
        ck.config = cfg.clone();
        for opt in [&mut ck.opt_gpp, &mut ck.opt_dbl, &mut ck.opt_disc] {
            opt.config = cfg.train.adam;
        }
        Ok(Trainer {
            ck,
            data,
            phase,
            weights,
            global_cache: vec![None; data.len()],
            phase_step: 0,
            log: Vec::new(),
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ck
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            checkpoint: self.ck,
            log: self.log,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.ck.config.train.seed);
        let tag = match self.phase {
            Phase::Init => 0u64,
            Phase::Gpp => 1,
            Phase::Joint => 2,
            Phase::Finetune => 3,
        };
        rng.set_stream((tag << 48) | self.phase_step);
        rng
    }

    pub fn run(mut self, steps: usize) -> Result<TrainOutcome> {
        let every = self.ck.config.train.log_every.max(1) as u64;
        for _ in 0..steps {
            let r = self.step()?;
            if self.phase_step.is_multiple_of(every) || self.phase_step == steps as u64 {
                info!("{:?} step {} total {:.5}", self.phase, r.step, r.total);
            }
        }
        Ok(self.finish())
    }

    /// One optimizer step over a freshly drawn batch.
    pub fn step(&mut self) -> Result<LossRecord> {
        if self.phase != Phase::Gpp && self.ck.config.train.stage_order == StageOrder::GlobalOnly {
            return Err(config_err!("global_only has no refinement stage to train"));
        }
        let mut rng = self.rng();
        let batch = self.ck.config.train.batch_size;
        let scale = 1.0 / batch as f32;
        let mut acc = Accum::default();
        let record = match self.phase {
            Phase::Gpp => {
                let mut grads = GradBuffer::new(&self.ck.gppnet.store);
                for _ in 0..batch {
                    let idx = rng.gen_range(0..self.data.len());
                    self.gpp_sample(idx, &mut grads, scale, &mut acc)?;
                }
                self.ck.opt_gpp.step(&mut self.ck.gppnet.store, &grads)?;
                acc.finish(batch)
            }
            _ => {
                let adv = self.weights.adv != 0.0;
                let mut grads = GradBuffer::new(&self.ck.dblrnet.store);
                let mut dgrads = GradBuffer::new(&self.ck.disc.store);
                for _ in 0..batch {
                    let idx = rng.gen_range(0..self.data.len());
                    let (x, y) = self.crop_pair(idx, &mut rng)?;
                    let fake = self.refine_sample(&x, &y, &mut grads, scale, &mut acc)?;
                    if adv {
                        self.disc_sample(&y, &fake, &mut dgrads, scale)?;
                    }
                }
                self.ck.opt_dbl.step(&mut self.ck.dblrnet.store, &grads)?;
                if adv {
                    self.ck.opt_disc.step(&mut self.ck.disc.store, &dgrads)?;
                }
                acc.finish(batch)
            }
        };
        self.phase_step += 1;
        self.ck.step += 1;
        self.ck.phase = self.phase;
        let record = LossRecord {
            step: self.ck.step,
            ..record
        };
        if !record.total.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at step {}: loss {}",
                record.step, record.total
            )));
        }
        self.log.push(record.clone());
        Ok(record)
    }

    fn gpp_sample(&self, idx: usize, grads: &mut GradBuffer, scale: f32, acc: &mut Accum) -> Result<()> {
        let (deg, clean) = &self.data[idx];
        let model = &self.ck.gppnet;
        let mut g = Graph::<f32>::new();
        let params = model.store.bind(&mut g, true);
        let x = g.constant(&deg.to_tensor());
        let y = g.constant(&clean.to_tensor());
        let out = model.forward(&mut g, &params, &x, self.ck.config.train.fusion)?;
        let (total, parts) = generator_objective(&mut g, &self.weights, &out.image, &y, None, None)?;
        g.backward(total)?;
        grads.accumulate(&g, &params, scale);
        acc.add(&g, total, &parts);
        Ok(())
    }

    /// Frozen global output of training image `idx`, computed once.
    fn global_image(&mut self, idx: usize) -> Result<ImageBuffer> {
        if let Some(img) = &self.global_cache[idx] {
            return Ok(img.clone());
        }
        let img = self
            .ck
            .gppnet
            .enhance_global(&self.data[idx].0, self.ck.config.train.fusion)?;
        self.global_cache[idx] = Some(img.clone());
        Ok(img)
    }

    /// Aligned input/target crops. The side is the configured crop clipped
    /// to the image and rounded down to the refinement multiple.
    fn crop_pair(&mut self, idx: usize, rng: &mut ChaCha8Rng) -> Result<(ImageBuffer, ImageBuffer)> {
        let src = match self.ck.config.train.stage_order {
            StageOrder::GlobalThenLocal => self.global_image(idx)?,
            _ => self.data[idx].0.clone(),
        };
        let clean = &self.data[idx].1;
        let m = self.ck.config.dblrnet.required_multiple(1);
        let (h, w) = (clean.height(), clean.width());
        let side = self.ck.config.train.crop.min(h).min(w) / m * m;
        let y0 = rng.gen_range(0..=h - side);
        let x0 = rng.gen_range(0..=w - side);
        Ok((src.crop(y0, x0, side, side)?, clean.crop(y0, x0, side, side)?))
    }

    fn refine_sample(
        &self,
        x: &ImageBuffer,
        y: &ImageBuffer,
        grads: &mut GradBuffer,
        scale: f32,
        acc: &mut Accum,
    ) -> Result<crate::diffcore::Tensor<f32>> {
        let cfg = &self.ck.config.train;
        let dbl = &self.ck.dblrnet;
        let mut g = Graph::<f32>::new();
        let params = dbl.store.bind(&mut g, true);
        let xv = g.constant(&x.to_tensor());
        let yv = g.constant(&y.to_tensor());
        let local = dbl.forward(&mut g, &params, &xv, 1, cfg.refine_mode)?;
        let out = if cfg.stage_order == StageOrder::LocalThenGlobal {
            // Parameters are predicted from the refined crop but treated as
            // constants; GPPNet stays frozen.
            let gpp = &self.ck.gppnet;
            let gp = gpp.store.bind(&mut g, false);
            let t = gpp.config.thumbnail;
            let det = g.detach(&local.image);
            let thumb = g.resize_bilinear(&det, t, t)?;
            let p = gpp.predict(&mut g, &gp, &thumb)?;
            gpp.apply(&mut g, &gp, &local.image, &p, cfg.fusion)?
        } else {
            local.image
        };
        let disc_params = (self.weights.adv != 0.0).then(|| self.ck.disc.store.bind(&mut g, false));
        let adv = disc_params.as_deref().map(|p| AdvInput {
            disc: &self.ck.disc,
            params: p,
        });
        let (total, parts) = generator_objective(&mut g, &self.weights, &out, &yv, local.maps.as_ref(), adv)?;
        g.backward(total)?;
        grads.accumulate(&g, &params, scale);
        acc.add(&g, total, &parts);
        Ok(g.value(out).clone())
    }

    fn disc_sample(
        &self,
        real: &ImageBuffer,
        fake: &crate::diffcore::Tensor<f32>,
        grads: &mut GradBuffer,
        scale: f32,
    ) -> Result<()> {
        let disc = &self.ck.disc;
        let mut g = Graph::<f32>::new();
        let params = disc.store.bind(&mut g, true);
        let r = g.constant(&real.to_tensor());
        let f = g.constant(fake);
        let loss = discriminator_loss(&mut g, disc, &params, &r, &f)?;
        g.backward(loss)?;
        grads.accumulate(&g, &params, scale);
        Ok(())
    }
}

#[derive(Default)]
struct Accum {
    parts: [Option<f64>; 5],
    total: f64,
}

impl Accum {
    fn add(&mut self, g: &Graph<f32>, total: Var, parts: &LossParts<Var>) {
        self.total += g.value(total).item() as f64;
        let slots = [parts.l1, parts.ssim, parts.tv, parts.adv, parts.reg];
        for (acc, v) in self.parts.iter_mut().zip(slots) {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + g.value(v).item() as f64);
            }
        }
    }

    fn finish(&self, n: usize) -> LossRecord {
        let n = n as f64;
        let p = self.parts.map(|v| v.map(|v| v / n));
        LossRecord {
            step: 0,
            l1: p[0],
            ssim: p[1],
            tv: p[2],
            adv: p[3],
            reg: p[4],
            total: self.total / n,
        }
    }
}

/// Trains GPPNet alone from fresh weights.
pub fn pretrain_gppnet(data: &[Pair], cfg: &Config) -> Result<TrainOutcome> {
    let ck = Checkpoint::new(cfg)?;
    Trainer::new(ck, data, Phase::Gpp, cfg)?.run(cfg.train.gpp_steps)
}

/// Trains DB-LRNet (and the discriminator when its weight is nonzero) with
/// GPPNet frozen. A `global_only` stage order has nothing to train and
/// returns the checkpoint unchanged.
pub fn train_joint(data: &[Pair], cfg: &Config, ck: Checkpoint) -> Result<TrainOutcome> {
    refine_phase(data, cfg, ck, Phase::Joint, cfg.train.joint_steps)
}

/// Joint training without the adversarial term.
pub fn finetune(data: &[Pair], cfg: &Config, ck: Checkpoint) -> Result<TrainOutcome> {
    refine_phase(data, cfg, ck, Phase::Finetune, cfg.train.finetune_steps)
}

fn refine_phase(data: &[Pair], cfg: &Config, ck: Checkpoint, phase: Phase, steps: usize) -> Result<TrainOutcome> {
    ck.ensure_compatible(cfg)?;
    if cfg.train.stage_order == StageOrder::GlobalOnly {
        if data.is_empty() {
            return Err(config_err!("training set is empty"));
        }
        return Ok(TrainOutcome {
            checkpoint: Checkpoint {
                config: cfg.clone(),
                ..ck
            },
            log: Vec::new(),
        });
    }
    Trainer::new(ck, data, phase, cfg)?.run(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dblrnet::DblrnetConfig;
    use crate::gppnet::GppnetConfig;
    use crate::synthdoc::generate_samples;

    fn micro(steps: usize) -> Config {
        let mut cfg = Config {
            gppnet: GppnetConfig::micro(),
            dblrnet: DblrnetConfig::micro(),
            ..Config::default()
        };
        cfg.train.batch_size = 2;
        cfg.train.crop = 64;
        cfg.train.gpp_steps = steps;
        cfg.train.joint_steps = steps;
        cfg.train.finetune_steps = steps;
        cfg.disc.widths = vec![4, 4, 4, 4];
        cfg
    }

    fn pairs(n: usize) -> Vec<Pair> {
        generate_samples(n, 64, (0.5, 0.5), 3)
            .unwrap()
            .into_iter()
            .map(|s| (s.degraded, s.clean))
            .collect()
    }

    #[test]
    fn empty_set_is_a_config_error() {
        assert!(matches!(pretrain_gppnet(&[], &micro(1)), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = pairs(3);
        let a = pretrain_gppnet(&data, &micro(3)).unwrap();
        let b = pretrain_gppnet(&data, &micro(3)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    }

    #[test]
    fn joint_keeps_gppnet_frozen() {
        let data = pairs(3);
        let cfg = micro(2);
        let ck = Checkpoint::new(&cfg).unwrap();
        let before = ck.gppnet.store.content_hash();
        let mut t = Trainer::new(ck, &data, Phase::Joint, &cfg).unwrap();
        for _ in 0..2 {
            t.step().unwrap();
            assert_eq!(t.checkpoint().gppnet.store.content_hash(), before);
        }
        assert_eq!(t.checkpoint().step, 2);
    }

    #[test]
    fn zero_adversarial_weight_leaves_discriminator_alone() {
        let data = pairs(2);
        let mut cfg = micro(2);
        cfg.train.weights.adv = 0.0;
        let ck = Checkpoint::new(&cfg).unwrap();
        let before = ck.disc.store.content_hash();
        let out = train_joint(&data, &cfg, ck).unwrap();
        assert_eq!(out.checkpoint.disc.store.content_hash(), before);
        assert!(out.log.iter().all(|r| r.adv.is_none()));
    }

    #[test]
    fn finetune_drops_adversarial_term_and_continues_steps() {
        let data = pairs(2);
        let cfg = micro(1);
        let ck = train_joint(&data, &cfg, Checkpoint::new(&cfg).unwrap())
            .unwrap()
            .checkpoint;
        let t = Trainer::new(ck, &data, Phase::Finetune, &cfg).unwrap();
        assert_eq!(t.weights().adv, 0.0);
        let out = t.run(1).unwrap();
        assert_eq!(out.log[0].step, 2);
        assert!(out.log[0].adv.is_none() && out.log[0].reg.is_some());
    }

    #[test]
    fn mismatched_checkpoint_is_a_version_error() {
        let data = pairs(1);
        let ck = Checkpoint::new(&micro(1)).unwrap();
        assert!(matches!(
            train_joint(&data, &Config::default(), ck),
            Err(Error::Version(_))
        ));
    }

    #[test]
    fn loss_log_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let rec = LossRecord {
            step: 1,
            l1: Some(0.5),
            total: 0.5,
            ..Default::default()
        };
        write_loss_log(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,l1,ssim,tv,adv,reg,total\n1,0.5,,,,,0.5\n");
    }
}
