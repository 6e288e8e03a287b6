//! Short seeded training runs along one design axis, tabulated in the row
//! layout of the corresponding comparison table.

use std::fmt;
use std::str::FromStr;

use glpge::dblrnet::RefineMode;
use glpge::evalkit::{count_dblrnet, psnr};
use glpge::gppnet::FusionStrategy;
use glpge::losses::{ssim, LossWeights};
use glpge::pipeline::{
    enhance_pipeline, pretrain_gppnet, train_joint, Checkpoint, Config, EnhanceOptions, InferenceMode, Pair, StageOrder,
};
use glpge::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Fusion,
    Stage,
    Loss,
    Refine,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fusion" => Ok(Axis::Fusion),
            "stage" => Ok(Axis::Stage),
            "loss" => Ok(Axis::Loss),
            "refine" => Ok(Axis::Refine),
            _ => Err(format!("unknown ablation axis {s:?} (fusion, stage, loss, refine)")),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Fusion => "fusion",
            Axis::Stage => "stage",
            Axis::Loss => "loss",
            Axis::Refine => "refine",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

fn scores(ck: &Checkpoint, test: &[Pair], opts: &EnhanceOptions) -> Result<(f64, f64)> {
    let mut s = 0.0;
    let mut p = 0.0;
    for (deg, clean) in test {
        let out = enhance_pipeline(ck, deg, opts)?;
        s += ssim(&out, clean)?;
        p += psnr(&out, clean)?;
    }
    let n = test.len() as f64;
    Ok((s / n, p / n))
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Pretrains GPPNet, trains the refinement stage and scores the baseline
/// pipeline on `test`.
fn run(cfg: &Config, train: &[Pair], test: &[Pair]) -> Result<(f64, f64)> {
    let gpp = pretrain_gppnet(train, cfg)?;
    let joint = train_joint(train, cfg, gpp.checkpoint)?;
    scores(
        &joint.checkpoint,
        test,
        &EnhanceOptions::from_config(cfg, InferenceMode::Baseline),
    )
}

pub fn ablate(axis: Axis, cfg: &Config, train: &[Pair], test: &[Pair]) -> Result<Table> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("ablation needs nonempty training and test sets".into()));
    }
    let table = match axis {
        Axis::Fusion => {
            let mut t = Table::new(&["fusion_strategy", "ssim", "psnr"]);
            for f in FusionStrategy::ALL {
                let mut c = cfg.clone();
                c.train.fusion = f;
                let (s, p) = run(&c, train, test)?;
                t.rows.push(vec![f.label().into(), fmt4(s), fmt2(p)]);
            }
            t
        }
        Axis::Stage => {
            let mut t = Table::new(&["integration_strategy", "ssim", "psnr"]);
            let gpp = pretrain_gppnet(train, cfg)?.checkpoint;
            for order in StageOrder::ALL {
                let mut c = cfg.clone();
                c.train.stage_order = order;
                let ck = train_joint(train, &c, gpp.clone())?.checkpoint;
                let (s, p) = scores(&ck, test, &EnhanceOptions::from_config(&c, InferenceMode::Baseline))?;
                t.rows.push(vec![order.label().into(), fmt4(s), fmt2(p)]);
            }
            t
        }
        Axis::Loss => {
            let mut t = Table::new(&["objective", "ssim_loss", "tv_loss", "ssim", "psnr"]);
            let w = cfg.train.weights;
            let profiles = [
                (
                    "L1",
                    LossWeights {
                        ssim: 0.0,
                        tv: 0.0,
                        ..w
                    },
                ),
                ("L1+SSIM", LossWeights { tv: 0.0, ..w }),
                ("L1+SSIM+TV", w),
            ];
            for (label, weights) in profiles {
                let mut c = cfg.clone();
                c.train.weights = weights;
                let (s, p) = run(&c, train, test)?;
                let mark = |on: bool| if on { "yes" } else { "no" }.to_string();
                t.rows.push(vec![
                    label.into(),
                    mark(weights.ssim > 0.0),
                    mark(weights.tv > 0.0),
                    fmt4(s),
                    fmt2(p),
                ]);
            }
            t
        }
        Axis::Refine => {
            let mut t = Table::new(&["architecture", "ssim", "psnr", "params_m", "gflops"]);
            for (label, mode) in [
                ("NestUNet-Dense", RefineMode::Direct),
                ("DB-LRNet", RefineMode::Parametric),
            ] {
                let mut c = cfg.clone();
                c.train.refine_mode = mode;
                let (s, p) = run(&c, train, test)?;
                let ck = Checkpoint::new(&c)?;
                let params = mode_params(&ck, mode);
                let flops = count_dblrnet(&ck.dblrnet, 512, 512, 1, mode)?.total;
                t.rows.push(vec![
                    label.into(),
                    fmt4(s),
                    fmt2(p),
                    format!("{:.3}", params as f64 / 1e6),
                    format!("{:.3}", flops as f64 / 1e9),
                ]);
            }
            t
        }
    };
    Ok(table)
}

/// Parameters the refinement stage actually uses in `mode`.
fn mode_params(ck: &Checkpoint, mode: RefineMode) -> usize {
    ck.dblrnet
        .layers()
        .iter()
        .filter(|l| {
            let direct_only = l.name.contains("head.direct");
            let parametric_only =
                l.name.contains("smooth") || l.name.contains("head.alpha") || l.name.contains("head.beta");
            match mode {
                RefineMode::Direct => !parametric_only,
                RefineMode::Parametric => !direct_only,
            }
        })
        .map(|l| l.param_count())
        .sum()
}
