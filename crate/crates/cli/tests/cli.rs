use std::path::Path;
use std::process::{Command, Output};

use glpge::pipeline::Config;

fn glpge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glpge"))
        .current_dir(dir)
        .env("GLPGE_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn micro_config(dir: &Path) {
    let mut cfg = Config {
        gppnet: glpge::gppnet::GppnetConfig::micro(),
        dblrnet: glpge::dblrnet::DblrnetConfig::micro(),
        ..Config::default()
    };
    cfg.train.batch_size = 1;
    cfg.train.crop = 64;
    cfg.disc.widths = vec![4, 4, 4, 4];
    std::fs::write(dir.join("micro.json"), cfg.to_json()).unwrap();
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&glpge(d, &[])), 2);
    assert_eq!(code(&glpge(d, &["frobnicate"])), 2);
    assert_eq!(code(&glpge(d, &["synth", "--out", "x", "--bogus"])), 2);
    assert_eq!(code(&glpge(d, &["synth", "--out", "x", "--intensity", "lots"])), 2);
    assert_eq!(
        code(&glpge(
            d,
            &[
                "enhance",
                "--checkpoint",
                "c",
                "--mode",
                "turbo",
                "--input",
                "a",
                "--output",
                "b"
            ]
        )),
        2
    );
    assert_eq!(code(&glpge(d, &["--help"])), 0);
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = glpge(d, &["eval", "--manifest", "missing.csv"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    std::fs::write(d.join("bad.json"), r#"{"train": {"batchsize": 2}}"#).unwrap();
    assert_eq!(code(&glpge(d, &["--config", "bad.json", "config", "dump"])), 1);
}

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = glpge(dir.path(), &["--seed", "9", "config", "dump"]);
    assert_eq!(code(&o), 0);
    let cfg = Config::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let mut want = Config::default();
    want.reseed(9);
    assert_eq!(cfg, want);
    let o = glpge(dir.path(), &["config", "dump", "--full"]);
    assert_eq!(
        Config::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap(),
        Config::full()
    );
}

#[test]
fn synthesis_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(
            code(&glpge(
                d,
                &["--seed", "4", "synth", "--out", out, "--count", "3", "--size", "64"]
            )),
            0
        );
    }
    let m = glpge::synthdoc::DatasetManifest::load(d.join("a/manifest.csv")).unwrap();
    assert_eq!(m.len(), 3);
    for row in &m.rows {
        for rel in [&row.degraded, &row.clean] {
            let a = std::fs::read(d.join("a").join(rel)).unwrap();
            let b = std::fs::read(d.join("b").join(rel)).unwrap();
            assert_eq!(a, b, "{rel}");
        }
    }
    assert_eq!(
        std::fs::read(d.join("a/manifest.csv")).unwrap(),
        std::fs::read(d.join("b/manifest.csv")).unwrap()
    );
}

#[test]
fn eval_without_checkpoint_scores_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&glpge(
            d,
            &[
                "synth",
                "--out",
                "data",
                "--count",
                "2",
                "--size",
                "64",
                "--intensity",
                "0"
            ]
        )),
        0
    );
    assert_eq!(
        code(&glpge(
            d,
            &["eval", "--manifest", "data/manifest.csv", "--json", "r.json"]
        )),
        0
    );
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    for row in r["rows"].as_array().unwrap() {
        assert_eq!(row["ssim"], 1.0);
    }
}

#[test]
fn compare_panel_sits_beside_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    micro_config(d);
    let c = ["--config", "micro.json"];
    let run = |args: &[&str]| code(&glpge(d, &[&c[..], args].concat()));
    assert_eq!(run(&["synth", "--out", "data", "--count", "1", "--size", "64"]), 0);
    assert_eq!(
        run(&[
            "train",
            "--phase",
            "gpp",
            "--manifest",
            "data/manifest.csv",
            "--out",
            "g.ck",
            "--steps",
            "1"
        ]),
        0
    );
    assert_eq!(
        run(&[
            "enhance",
            "--checkpoint",
            "g.ck",
            "--manifest",
            "data/manifest.csv",
            "--out-dir",
            "out",
            "--compare"
        ]),
        0
    );
    let mut names: Vec<String> = std::fs::read_dir(d.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2, "{names:?}");
    let enhanced = glpge::imageio::load_image(d.join("out").join(&names[1])).unwrap();
    let panel = glpge::imageio::load_image(d.join("out").join(&names[0])).unwrap();
    assert!(names[0].ends_with("_compare.png") && names[1].ends_with("_enhanced.png"));
    assert!(panel.width() > 2 * enhanced.width());
}
