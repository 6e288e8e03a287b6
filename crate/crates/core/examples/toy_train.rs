//! Trains the toy models on a synthetic set and reports held-out SSIM.
//!
//! Usage: `toy_train [gpp_steps] [joint_steps]`

use std::time::Instant;

use glpge::losses::ssim;
use glpge::pipeline::{enhance_pipeline, pretrain_gppnet, train_joint, Config, EnhanceOptions, InferenceMode, Pair};
use glpge::synthdoc::generate_samples;

fn mean_ssim(pairs: &[Pair], f: impl Fn(&Pair) -> glpge::imageio::ImageBuffer) -> f64 {
    pairs.iter().map(|p| ssim(&f(p), &p.1).unwrap()).sum::<f64>() / pairs.len() as f64
}

fn main() -> glpge::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("step count"))
        .collect();
    let mut cfg = Config::default();
    cfg.train.gpp_steps = args.first().copied().unwrap_or(cfg.train.gpp_steps);
    cfg.train.joint_steps = args.get(1).copied().unwrap_or(cfg.train.joint_steps);
    let s = &cfg.synth;
    let all: Vec<Pair> = generate_samples(s.count + 20, s.size, (s.intensity_min, s.intensity_max), s.seed)?
        .into_iter()
        .map(|x| (x.degraded, x.clean))
        .collect();
    let (train, test) = all.split_at(s.count);
    println!("degraded ssim {:.4}", mean_ssim(test, |p| p.0.clone()));

    let t = Instant::now();
    let gpp = pretrain_gppnet(train, &cfg)?;
    println!(
        "gpp: {:.1}s, last loss {:?}",
        t.elapsed().as_secs_f64(),
        gpp.log.last().map(|r| r.total)
    );
    let opts = EnhanceOptions {
        stage_order: glpge::pipeline::StageOrder::GlobalOnly,
        ..EnhanceOptions::from_config(&cfg, InferenceMode::Baseline)
    };
    println!(
        "global ssim {:.4}",
        mean_ssim(test, |p| enhance_pipeline(&gpp.checkpoint, &p.0, &opts).unwrap())
    );

    let t = Instant::now();
    let joint = train_joint(train, &cfg, gpp.checkpoint)?;
    println!("joint: {:.1}s", t.elapsed().as_secs_f64());
    for r in joint.log.iter().step_by(cfg.train.log_every.max(1)) {
        println!("  step {} total {:.4}", r.step, r.total);
    }
    let ck = &joint.checkpoint;
    let base = EnhanceOptions::from_config(&cfg, InferenceMode::Baseline);
    let fast = EnhanceOptions::from_config(&cfg, InferenceMode::Fast);
    println!(
        "baseline ssim {:.4}",
        mean_ssim(test, |p| enhance_pipeline(ck, &p.0, &base).unwrap())
    );
    println!(
        "fast ssim {:.4}",
        mean_ssim(test, |p| enhance_pipeline(ck, &p.0, &fast).unwrap())
    );
    Ok(())
}
