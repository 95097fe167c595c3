use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use interpnet::data::{SparseSeries, Task};
use interpnet::dataio::{generate_synthetic, load_from_paths, write_dataset, DatasetPaths, SynthConfig};
use interpnet::harness::config::parse_channels;
use interpnet::harness::experiment::all_channel_subsets;
use interpnet::harness::{
    run_ablation, run_cv, run_eval, run_train, DatasetInfo, ExperimentConfig, Manifest, TrainPaths,
};
use interpnet::model::ModelKind;
use interpnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "interpnet",
    version,
    about = "Interpolation-prediction networks for sparse, irregular time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the standard CSV layout.
    SynthGen(SynthArgs),
    /// Train one model with early stopping; writes checkpoints and a step log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// k-fold cross-validation of one or more models.
    Cv(CvArgs),
    /// Cross-validate the interpolation model over channel subsets.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. `--set lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset directory holding observations.csv, labels.csv and dims.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Signal in trend, transients and sampling rate.
    Planted,
    /// No class signal at all.
    Null,
    /// Class signal only in the latent trend.
    TrendOnly,
    /// Class signal only in the sampling rate.
    IntensityOnly,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = 12)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = Task::Classification)]
    task: Task,
    #[arg(long, value_enum, default_value_t = Preset::Planted)]
    preset: Preset,
    /// Effect size for the single-signal presets.
    #[arg(long, default_value_t = 1.0)]
    effect: f64,
    #[arg(long)]
    window: Option<f64>,
    /// Override a generator parameter (repeatable), e.g. `--set noise=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Model name, e.g. ipn, ipn-SI+I, gru-d, mean-logreg.
    #[arg(long)]
    model: Option<String>,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window: Option<f64>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated models; defaults to the configured model.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Semicolon-separated subsets such as `SI;I;SI+T+I`; all seven by default.
    #[arg(long)]
    subsets: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
}

fn load(cfg: &ExperimentConfig) -> Result<(Vec<SparseSeries>, DatasetInfo)> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --data or data = ...)".into()))?;
    let (ds, _) = load_from_paths(&DatasetPaths::in_dir(dir), cfg.task, cfg.window)?;
    let info = DatasetInfo::new(dir.display().to_string(), &ds.cases);
    Ok((ds.cases, info))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (use --out or out = ...)".into()))
}

fn finish(mut manifest: Manifest, dir: &Path, outputs: &[&str], started: Instant) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))
}

fn synth_gen(a: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut sc = SynthConfig::new(a.cases, a.dims, a.seed);
    sc.task = a.task;
    if let Some(w) = a.window {
        sc.window = w;
    }
    sc = match a.preset {
        Preset::Planted => sc,
        Preset::Null => sc.null(),
        Preset::TrendOnly => sc.trend_only(a.effect),
        Preset::IntensityOnly => sc.intensity_only(a.effect),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
        sc.set(k, v)?;
    }
    let task = sc.task;
    let ds = generate_synthetic(&sc)?;
    write_dataset(&ds, &DatasetPaths::in_dir(&a.out))?;
    let mut cfg = ExperimentConfig {
        task,
        window: sc.window,
        seed: a.seed,
        ..ExperimentConfig::default()
    };
    cfg.out = Some(a.out.clone());
    let mut manifest = Manifest::new("synth-gen", &cfg);
    manifest.dataset = Some(DatasetInfo::new("synthetic", &ds.cases));
    manifest.synth = Some(sc);
    println!("{}", interpnet::dataio::summarize(&ds)?);
    finish(
        manifest,
        &a.out,
        &["observations.csv", "labels.csv", "dims.txt"],
        started,
    )
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = a.common.resolve()?;
    if let Some(m) = &a.model {
        cfg.model = m.parse()?;
    }
    let dir = out_dir(&cfg)?;
    let (cases, info) = load(&cfg)?;
    let mut manifest = Manifest::new("train", &cfg);
    manifest.dataset = Some(info);
    let summary = run_train(&cases, &cfg, &TrainPaths::in_dir(&dir), a.resume.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    finish(manifest, &dir, &["train_log.csv", "last.ckpt", "best.ckpt"], started)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let ck = interpnet::checkpoint::Checkpoint::load(&a.checkpoint)?;
    let window = a.window.unwrap_or(ck.model.config.window);
    let (ds, _) = load_from_paths(&DatasetPaths::in_dir(&a.data), ck.model.config.task, window)?;
    let report = run_eval(&a.checkpoint, &ds.cases)?;
    let json = serde_json::to_string_pretty(&report)?;
    for (name, v) in report.values() {
        println!("{name:>12}  {v:.4}");
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("eval.json"), &json)?;
        let cfg = ExperimentConfig {
            task: ck.model.config.task,
            model: ck.model.config.kind.clone(),
            data: Some(a.data.clone()),
            out: Some(dir.clone()),
            window,
            ..ExperimentConfig::default()
        };
        let mut manifest = Manifest::new("eval", &cfg);
        manifest.dataset = Some(DatasetInfo::new(a.data.display().to_string(), &ds.cases));
        finish(manifest, dir, &["eval.json"], started)?;
    }
    Ok(())
}

fn cv_cmd(a: &CvArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    let kinds = match &a.models {
        Some(list) => list
            .split(',')
            .map(|m| m.trim().parse::<ModelKind>())
            .collect::<Result<Vec<_>>>()?,
        None => vec![cfg.model.clone()],
    };
    let dir = out_dir(&cfg)?;
    let (cases, info) = load(&cfg)?;
    let report = run_cv(&cases, &kinds, &cfg)?;
    report.write(&dir, "cv_report")?;
    print!("{}", report.table());
    let mut manifest = Manifest::new("cv", &cfg);
    manifest.dataset = Some(info);
    finish(manifest, &dir, &["cv_report.json", "cv_report.txt"], started)
}

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    let subsets = match &a.subsets {
        Some(s) => s.split(';').map(parse_channels).collect::<Result<Vec<_>>>()?,
        None => all_channel_subsets(),
    };
    let dir = out_dir(&cfg)?;
    let (cases, info) = load(&cfg)?;
    let report = run_ablation(&cases, &subsets, &cfg)?;
    report.write(&dir, "ablation_report")?;
    print!("{}", report.table());
    let mut manifest = Manifest::new("ablate", &cfg);
    manifest.dataset = Some(info);
    finish(
        manifest,
        &dir,
        &["ablation_report.json", "ablation_report.txt"],
        started,
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Cv(a) => cv_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
