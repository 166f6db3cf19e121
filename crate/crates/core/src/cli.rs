//! The `ds3m` command line. Every command is a pure function of its config,
//! input files and seed; outputs are refused if they already exist unless
//! `--force` is given.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::experiment::{
    evaluate_tables, forecast, forecasts_to_csv, load_data, run, segmentation, segmentation_to_csv, split_data, target_windows, train_model, Dataset,
    ExperimentConfig, PredictConfig, RunManifest, Source,
};
use crate::simulators::{simulate_lorenz, simulate_toy, LorenzConfig, Table, ToyConfig};
use crate::training::Window;

#[derive(Parser, Debug)]
#[command(name = "ds3m", version, about = "Deep switching state space model experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a labeled series to CSV.
    Simulate(SimulateArgs),
    /// Train a model from an experiment config.
    Train(TrainArgs),
    /// One-step forecasts of every window's last step.
    Predict(PredictArgs),
    /// Regime estimate of every window's last step.
    Segment(SegmentArgs),
    /// Score a forecast or segmentation file against the truth.
    Evaluate(EvaluateArgs),
    /// Run a whole experiment and write every artifact with a manifest.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Simulator {
    Toy,
    Lorenz,
}

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub name: Simulator,
    /// TOML with simulator parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint and its recorded best validation loss.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Record wall-clock time in the manifest.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SeriesInput {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with the checkpoint's observed columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Only the final N windows.
    #[arg(long)]
    pub last: Option<usize>,
    /// Experiment config whose `predict` section supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: SeriesInput,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub coverage: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: SeriesInput,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Forecast or segmentation file.
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Experiment config, or a manifest to replay.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub coverage: Option<f64>,
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Dimension { .. } | Error::Index { .. } => 3,
        Error::Numeric(_) | Error::Divergence { .. } | Error::Unstable { .. } | Error::Support { .. } => 4,
        Error::Contract(_) => 1,
    }
}

fn check_free(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Config(format!("{} already exists (pass --force to overwrite)", path.display())));
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads an experiment config or the config recorded in a manifest, with a
/// relative CSV path made absolute against the file's directory.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = match RunManifest::from_toml(&text) {
        Ok(m) => m.config,
        Err(_) => ExperimentConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg = cfg.seeded();
    }
    if let Some(p) = cfg.data.path.as_mut() {
        if p.is_relative() {
            let joined = path.parent().unwrap_or(Path::new(".")).join(&*p);
            *p = std::path::absolute(&joined).map_err(|e| Error::io(&joined, e))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Segment(a) => segment(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    check_free(&a.out, a.common.force)?;
    let series = match a.name {
        Simulator::Toy => {
            let mut c: ToyConfig = a.config.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            c.seed = a.common.seed.unwrap_or(c.seed);
            simulate_toy(&c)?
        }
        Simulator::Lorenz => {
            let mut c: LorenzConfig = a.config.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            c.seed = a.common.seed.unwrap_or(c.seed);
            simulate_lorenz(&c)?
        }
    };
    series.write_csv(&a.out)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.common.seed)?;
    let (ckpt_path, log_path, manifest_path) = (a.out.join("checkpoint.ckpt"), a.out.join("train_log.tsv"), a.out.join("manifest.toml"));
    for p in [&ckpt_path, &log_path, &manifest_path] {
        check_free(p, a.common.force)?;
    }
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let clock = Instant::now();
    let data = load_data(&cfg.data)?;
    let split = split_data(&cfg, &data)?;
    let (ck, report) = train_model(&cfg, &data, &split, resume)?;
    let secs = clock.elapsed().as_secs_f64();
    eprintln!("trained {} epochs in {secs:.1}s", report.epochs.len());
    ensure_dir(&a.out)?;
    ck.save(&ckpt_path)?;
    write(&log_path, &report.to_records())?;
    let mut m = RunManifest::new(&cfg, &report);
    m.artifacts.insert("checkpoint".into(), ckpt_path.display().to_string());
    m.artifacts.insert("train_log".into(), log_path.display().to_string());
    if let Some(r) = &a.resume {
        m.artifacts.insert("resumed_from".into(), r.display().to_string());
    }
    m.wall_seconds = a.timing.then_some(secs);
    write(&manifest_path, &m.to_toml()?)
}

fn windows_for(input: &SeriesInput) -> Result<(Checkpoint, Vec<Window>, PredictConfig)> {
    let ck = Checkpoint::load(&input.checkpoint)?;
    let table = Table::read(&input.data)?;
    let data = Dataset::from_table(&table, Some(&ck.columns))?;
    let ws = target_windows(&ck, &data.y, input.last)?;
    let p = match &input.config {
        Some(c) => load_config(c, None)?.predict,
        None => PredictConfig::default(),
    };
    Ok((ck, ws, p))
}

fn predict(a: PredictArgs) -> Result<()> {
    check_free(&a.out, a.common.force)?;
    let (ck, ws, mut p) = windows_for(&a.input)?;
    p.samples = a.samples.unwrap_or(p.samples);
    p.coverage = a.coverage.unwrap_or(p.coverage);
    let f = forecast(&ck, &ws, &p, a.common.seed.unwrap_or(0))?;
    let targets: Vec<usize> = ws.iter().map(Window::end).collect();
    write(&a.out, &forecasts_to_csv(&ck.columns, &targets, &f))
}

fn segment(a: SegmentArgs) -> Result<()> {
    check_free(&a.out, a.common.force)?;
    let (ck, ws, p) = windows_for(&a.input)?;
    let seg = segmentation(&ck, &ws, a.samples.unwrap_or(p.segment_samples), a.common.seed.unwrap_or(0))?;
    let targets: Vec<usize> = ws.iter().map(Window::end).collect();
    write(&a.out, &segmentation_to_csv(&targets, &seg))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    check_free(&a.out, a.force)?;
    let m = evaluate_tables(&Table::read(&a.prediction)?, &Table::read(&a.truth)?)?;
    let text = m.to_kv("");
    print!("{text}");
    write(&a.out, &text)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, a.common.seed)?;
    cfg.predict.samples = a.samples.unwrap_or(cfg.predict.samples);
    cfg.predict.coverage = a.coverage.unwrap_or(cfg.predict.coverage);
    cfg.validate()?;
    let names = ["data.csv", "checkpoint.ckpt", "train_log.tsv", "forecasts.csv", "segmentation.csv", "metrics.txt", "manifest.toml"];
    for n in names {
        check_free(&a.out.join(n), a.common.force)?;
    }
    let clock = Instant::now();
    let out = run(&cfg)?;
    let secs = clock.elapsed().as_secs_f64();
    eprintln!("finished in {secs:.1}s");
    ensure_dir(&a.out)?;
    let mut m = RunManifest::new(&cfg, &out.report);
    let mut put = |name: &str, text: &str| -> Result<()> {
        let path = a.out.join(name);
        write(&path, text)?;
        m.artifacts.insert(name.split('.').next().unwrap_or(name).to_string(), path.display().to_string());
        Ok(())
    };
    match cfg.data.source {
        Source::Toy => put("data.csv", &simulate_toy(&cfg.data.toy)?.to_csv())?,
        Source::Lorenz => put("data.csv", &simulate_lorenz(&cfg.data.lorenz)?.to_csv())?,
        Source::Csv => {}
    }
    put("checkpoint.ckpt", &out.checkpoint.to_text()?)?;
    put("train_log.tsv", &out.report.to_records())?;
    put("forecasts.csv", &forecasts_to_csv(&out.data.columns, &out.targets, &out.forecasts))?;
    if let Some(seg) = &out.segmentation {
        put("segmentation.csv", &segmentation_to_csv(&out.targets, seg))?;
    }
    let mut metrics = out.forecast_metrics.to_kv("forecast.");
    if let Some(s) = &out.segmentation_metrics {
        metrics.push_str(&s.to_kv("segmentation."));
    }
    if let Some(d) = &out.gamma_diagonal {
        metrics.push_str(&format!("gamma_diagonal={}\n", d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")));
    }
    put("metrics.txt", &metrics)?;
    if let (Source::Csv, Some(p)) = (cfg.data.source, &cfg.data.path) {
        m.artifacts.insert("data".into(), p.display().to_string());
    }
    m.forecast = Some(out.forecast_metrics.clone());
    m.segmentation = out.segmentation_metrics.clone();
    m.gamma_diagonal = out.gamma_diagonal.clone();
    m.wall_seconds = a.timing.then_some(secs);
    write(&a.out.join("manifest.toml"), &m.to_toml()?)?;
    print!("{metrics}");
    Ok(())
}
