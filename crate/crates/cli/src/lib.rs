//! Command-line front-end: dataset synthesis, training phases, enhancement,
//! evaluation, benchmarks and ablation tables.

pub mod ablate;
pub mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use glpge::dblrnet::RefineMode;
use glpge::evalkit::{evaluate_pairs, image_metrics};
use glpge::imageio::{load_image, save_image, ImageBuffer};
use glpge::pipeline::{
    bench, enhance_pipeline, finetune, load_pairs, pretrain_gppnet, train_joint, write_loss_log, Checkpoint, Config,
    EnhanceOptions, InferenceMode, StageOrder, TrainOutcome,
};
use glpge::synthdoc::{build_dataset, DatasetManifest};

use ablate::{ablate, Axis};
use render::report_render;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] glpge::Error),
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(glpge::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Parser)]
#[command(name = "glpge", version, about = "Two-stage document image enhancement")]
pub struct Cli {
    /// JSON configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, initialization and cropping.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render and degrade a synthetic paired dataset.
    Synth(SynthArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Enhance one image or every image of a manifest.
    Enhance(EnhanceArgs),
    /// Score enhanced output against clean references.
    Eval(EvalArgs),
    /// Analytic FLOPs and wall times of the baseline and fast paths.
    Bench(BenchArgs),
    /// Short training runs along one design axis.
    Ablate(AblateArgs),
    /// Configuration utilities.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Degradation intensity, either `x` or `lo,hi`.
    #[arg(long)]
    pub intensity: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Gpp,
    Joint,
    Finetune,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to start from; required for joint and finetune.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Overrides the phase's configured step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Loss log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "baseline", value_parser = parse_mode)]
    pub mode: InferenceMode,
    #[arg(long)]
    pub k_fast: Option<usize>,
    #[arg(long, value_parser = parse_stage)]
    pub stage_order: Option<StageOrder>,
    #[arg(long, value_parser = parse_refine)]
    pub refine_mode: Option<RefineMode>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, conflicts_with = "manifest", requires = "output")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Reference image for a single input's comparison strip.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Comparison strip: a file for a single input; with a manifest, strips
    /// are written next to the outputs.
    #[arg(long, num_args = 0..=1)]
    pub compare: Option<Option<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Without a checkpoint the degraded images themselves are scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "baseline", value_parser = parse_mode)]
    pub mode: InferenceMode,
    #[arg(long, value_parser = parse_stage)]
    pub stage_order: Option<StageOrder>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub spectral: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Without a checkpoint, freshly initialized models are measured.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub k_fast: Option<usize>,
    /// Measure the full-size architectures instead of the configured ones.
    #[arg(long, conflicts_with = "checkpoint")]
    pub full: bool,
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub axis: Axis,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Held-out pairs; defaults to the training manifest.
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Steps for both training phases of every row.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Print the effective configuration as JSON.
    Dump {
        #[arg(long)]
        full: bool,
    },
}

fn parse_mode(s: &str) -> Result<InferenceMode, String> {
    s.parse().map_err(|e: glpge::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<StageOrder, String> {
    s.parse().map_err(|e: glpge::Error| e.to_string())
}

fn parse_refine(s: &str) -> Result<RefineMode, String> {
    s.parse().map_err(|e: glpge::Error| e.to_string())
}

/// Parses `argv`, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("GLPGE_LOG")
        .try_init();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `glpge --help` for usage.");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Bounds the worker pool with `GLPGE_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("GLPGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Config::from_json(&text)?
        }
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => synth(a, cfg),
        Command::Train(a) => train(a, &cli, cfg),
        Command::Enhance(a) => enhance(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => run_bench(a, cfg),
        Command::Ablate(a) => run_ablate(a, cfg),
        Command::Config(ConfigCommand::Dump { full }) => {
            let cfg = if *full {
                let mut c = Config::full();
                if let Some(s) = cli.seed {
                    c.reseed(s);
                }
                c
            } else {
                cfg
            };
            emit(&cfg.to_json());
            Ok(())
        }
    }
}

fn parse_intensity(s: &str) -> CliResult<(f64, f64)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("bad intensity {s:?}")))
    };
    match s.split_once(',') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

fn synth(a: &SynthArgs, cfg: Config) -> CliResult {
    let s = cfg.synth;
    let range = match &a.intensity {
        Some(text) => parse_intensity(text)?,
        None => (s.intensity_min, s.intensity_max),
    };
    let m = build_dataset(
        a.count.unwrap_or(s.count),
        &a.out,
        a.size.unwrap_or(s.size),
        range,
        s.seed,
    )?;
    info!("wrote {} pairs to {}", m.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, cli: &Cli, mut cfg: Config) -> CliResult {
    let init = a.init.as_ref().map(Checkpoint::load).transpose()?;
    if let (Some(ck), None) = (&init, &cli.config) {
        // Without an explicit config the checkpoint's own settings apply.
        cfg = ck.config.clone();
        if let Some(s) = cli.seed {
            cfg.reseed(s);
        }
    }
    if let Some(n) = a.steps {
        match a.phase {
            PhaseArg::Gpp => cfg.train.gpp_steps = n,
            PhaseArg::Joint => cfg.train.joint_steps = n,
            PhaseArg::Finetune => cfg.train.finetune_steps = n,
        }
    }
    cfg.validate()?;
    let data = load_pairs(&DatasetManifest::load(&a.manifest)?)?;
    let outcome: TrainOutcome = match (a.phase, init) {
        (PhaseArg::Gpp, None) => pretrain_gppnet(&data, &cfg)?,
        (PhaseArg::Gpp, Some(ck)) => {
            glpge::pipeline::Trainer::new(ck, &data, glpge::pipeline::Phase::Gpp, &cfg)?.run(cfg.train.gpp_steps)?
        }
        (PhaseArg::Joint, Some(ck)) => train_joint(&data, &cfg, ck)?,
        (PhaseArg::Finetune, Some(ck)) => finetune(&data, &cfg, ck)?,
        (_, None) => return Err(CliError::Usage("--init is required for joint and finetune".into())),
    };
    outcome.checkpoint.save(&a.out)?;
    if let Some(p) = &a.log {
        write_loss_log(p, &outcome.log)?;
    }
    if let Some(last) = outcome.log.last() {
        info!("step {} total loss {:.5}", last.step, last.total);
    }
    Ok(())
}

fn options(p: &PipelineArgs, ck: &Checkpoint) -> EnhanceOptions {
    let mut o = EnhanceOptions::from_config(&ck.config, p.mode);
    if let Some(k) = p.k_fast {
        o.k_fast = k;
    }
    if let Some(s) = p.stage_order {
        o.stage_order = s;
    }
    if let Some(r) = p.refine_mode {
        o.refine_mode = r;
    }
    o
}

fn caption(out: &ImageBuffer, reference: Option<&ImageBuffer>) -> glpge::Result<String> {
    Ok(match reference {
        Some(r) => {
            let m = image_metrics("", out, r, false)?;
            format!("SSIM {:.4}  PSNR {:.2} DB", m.ssim, m.psnr)
        }
        None => format!("{}X{}", out.width(), out.height()),
    })
}

fn write_strip(
    path: &Path,
    src: &ImageBuffer,
    out: &ImageBuffer,
    reference: Option<&ImageBuffer>,
) -> glpge::Result<()> {
    let mut panels = vec![src, out];
    panels.extend(reference);
    let strip = report_render(&panels, &caption(out, reference)?)?;
    save_image(&strip, path)
}

fn enhance(a: &EnhanceArgs) -> CliResult {
    let ck = Checkpoint::load(&a.pipeline.checkpoint)?;
    let opts = options(&a.pipeline, &ck);
    match (&a.input, &a.manifest) {
        (Some(input), None) => {
            let output = a.output.as_ref().expect("clap requires --output with --input");
            let img = load_image(input)?;
            let out = enhance_pipeline(&ck, &img, &opts)?;
            save_image(&out, output)?;
            match &a.compare {
                Some(Some(strip)) => {
                    let reference = a.reference.as_ref().map(load_image).transpose()?;
                    write_strip(strip, &img, &out, reference.as_ref())?;
                }
                Some(None) => return Err(CliError::Usage("--compare needs a file name for a single input".into())),
                None => {}
            }
            Ok(())
        }
        (None, Some(manifest)) => {
            let dir = a.out_dir.as_ref().expect("clap requires --out-dir with --manifest");
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let m = DatasetManifest::load(manifest)?;
            for (i, row) in m.rows.iter().enumerate() {
                let (deg, clean) = m.load_pair(i)?;
                let out = enhance_pipeline(&ck, &deg, &opts)?;
                let stem = Path::new(&row.degraded)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("{i:05}"));
                save_image(&out, dir.join(format!("{stem}_enhanced.png")))?;
                if a.compare.is_some() {
                    write_strip(&dir.join(format!("{stem}_compare.png")), &deg, &out, Some(&clean))?;
                }
            }
            Ok(())
        }
        _ => Err(CliError::Usage(
            "enhance needs either --input/--output or --manifest/--out-dir".into(),
        )),
    }
}

fn eval(a: &EvalArgs) -> CliResult {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut opts = EnhanceOptions::from_config(&ck.config, a.mode);
            if let Some(s) = a.stage_order {
                opts.stage_order = s;
            }
            evaluate_pairs(
                &manifest,
                |img: &ImageBuffer| enhance_pipeline(&ck, img, &opts),
                a.spectral,
            )?
        }
        None => evaluate_pairs(&manifest, |img: &ImageBuffer| Ok(img.clone()), a.spectral)?,
    };
    if a.json.is_none() && a.csv.is_none() {
        emit(&report.to_json());
    }
    report.write(a.json.as_deref(), a.csv.as_deref())?;
    Ok(())
}

fn run_bench(a: &BenchArgs, cfg: Config) -> CliResult {
    let ck = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None if a.full => Checkpoint::new(&Config {
            gppnet: Config::full().gppnet,
            dblrnet: Config::full().dblrnet,
            ..cfg
        })?,
        None => Checkpoint::new(&cfg)?,
    };
    let mut opts = EnhanceOptions::from_config(&ck.config, InferenceMode::Fast);
    if let Some(k) = a.k_fast {
        opts.k_fast = k;
    }
    let report = bench(&ck, &a.sizes, &opts, !a.no_timing)?;
    let json = report.to_json();
    match &a.out {
        Some(p) => fs::write(p, json + "\n").map_err(|e| io_err(p, e))?,
        None => emit(&json),
    }
    Ok(())
}

fn run_ablate(a: &AblateArgs, mut cfg: Config) -> CliResult {
    if let Some(n) = a.steps {
        cfg.train.gpp_steps = n;
        cfg.train.joint_steps = n;
    }
    let train = load_pairs(&DatasetManifest::load(&a.manifest)?)?;
    let test = match &a.test_manifest {
        Some(p) => load_pairs(&DatasetManifest::load(p)?)?,
        None => train.clone(),
    };
    let table = ablate(a.axis, &cfg, &train, &test)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let path = a.out_dir.join(format!("ablation_{}.csv", a.axis));
    fs::write(&path, table.to_csv()).map_err(|e| io_err(&path, e))?;
    Ok(())
}
