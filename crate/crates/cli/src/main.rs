//! `bline`: generate phantom datasets, resample them, train and evaluate a
//! single model, and run the representation/resolution sweep.
//!
//! Every subcommand prints one JSON object on stdout when it succeeds. On
//! failure it prints `{"error":{"kind":..,"message":..}}` on stderr and exits
//! with a nonzero status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bline_core::harness::{
    self, emit_report, evaluate_clips, load_dataset, preprocess::preprocess_all, run_sweep_on, save_dataset,
    summarize, Dataset, DatasetSource, ExperimentConfig, InputDims, Progress, ReportFormat, SweepConfig,
};
use bline_core::nn::{checkpoint, train::train_with, ArchConfig};
use bline_core::synthgen::{PhantomConfig, Representation};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

/// Default output directory when `--out` is not given.
const OUT_DIR_VAR: &str = "LUSB_OUT_DIR";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] bline_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "bline", version, about = "B-line detection in Cartesian and polar ultrasound phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset in the LUSV1 container.
    Gen(GenArgs),
    /// Preprocess a native dataset into one representation and size.
    Resample(ResampleArgs),
    /// Train one model on a whole dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the cross-validated representation/resolution sweep.
    Sweep(SweepArgs),
    /// Re-emit report files from a stored JSON report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Number of clips.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Frames per clip; overrides the phantom config.
    #[arg(long)]
    frames: Option<usize>,
    /// Phantom config as JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "polar")]
    rep: Representation,
    #[arg(long, default_value = "64x64")]
    dims: InputDims,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings shared by `train` and `eval`, layered over an experiment config.
#[derive(Args, Debug)]
struct ModelArgs {
    /// Experiment config as JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LUSV1 dataset; defaults to the config's dataset source.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    rep: Option<Representation>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dims: Option<InputDims>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Path of the JSON file with per-clip predictions.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep config as JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Master seed for folds and training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Restrict the sweep to one representation.
    #[arg(long)]
    rep: Option<Representation>,
    /// Restrict the sweep to one input size.
    #[arg(long)]
    dims: Option<InputDims>,
    /// Output directory for report.{csv,json,svg}.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-fold progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json written by `sweep`.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated list of csv, json, svg, or `all`.
    #[arg(long, value_parser = parse_formats, default_value = "all")]
    format: Formats,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Formats(Vec<ReportFormat>);

fn parse_formats(s: &str) -> std::result::Result<Formats, String> {
    if s == "all" {
        return Ok(Formats(ReportFormat::ALL.to_vec()));
    }
    s.split(',')
        .map(|f| f.parse::<ReportFormat>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()
        .map(Formats)
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn out_path(given: Option<PathBuf>, default_name: &str) -> PathBuf {
    given.unwrap_or_else(|| out_dir().join(default_name))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| bline_core::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            Ok(serde_json::from_str(&text).map_err(bline_core::Error::from)?)
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(bline_core::Error::from)? + "\n";
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| bline_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let tmp = path.with_extension("json.tmp");
    let io = |e| bline_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

fn gen(args: GenArgs) -> Result<serde_json::Value> {
    let mut phantom: PhantomConfig = read_config(args.config.as_deref())?;
    if let Some(t) = args.frames {
        phantom.frames_per_clip = t;
    }
    let dataset = Dataset::generate(&phantom, args.n, args.seed)?;
    let path = out_path(args.out, "dataset.lusv");
    let manifest = save_dataset(&dataset, &path)?;
    Ok(json!({
        "command": "gen",
        "path": path,
        "clips": dataset.len(),
        "bline_clips": dataset.class_labels().iter().filter(|&&b| b).count(),
        "checksum": manifest.checksum,
    }))
}

fn resample(args: ResampleArgs) -> Result<serde_json::Value> {
    harness::validate_arm(args.rep, args.dims)?;
    let mut dataset = load_dataset(&args.input)?;
    dataset.clips = preprocess_all(&dataset.clips, args.rep, args.dims)?;
    let label = harness::arm_label(args.rep, args.dims);
    let path = out_path(args.out, &format!("dataset_{label}.lusv"));
    let manifest = save_dataset(&dataset, &path)?;
    Ok(json!({
        "command": "resample",
        "path": path,
        "representation": args.rep,
        "dims": args.dims,
        "clips": dataset.len(),
        "checksum": manifest.checksum,
    }))
}

fn experiment_config(args: &ModelArgs) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = read_config(args.config.as_deref())?;
    if let Some(p) = &args.input {
        config.dataset = DatasetSource::Path(p.clone());
    }
    if let Some(r) = args.rep {
        config.representation = r;
    }
    Ok(config)
}

fn train(args: TrainArgs) -> Result<serde_json::Value> {
    let mut config = experiment_config(&args.model)?;
    if let Some(d) = args.dims {
        config.input_dims = d;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.train.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    config.validate()?;
    let dataset = config.dataset.load()?;
    let clips = preprocess_all(&dataset.clips, config.representation, config.input_dims)?;
    let arch = ArchConfig {
        channels: config.channels.clone(),
        precision: config.precision,
        ..ArchConfig::for_input(config.input_dims.h, config.input_dims.w)
    };
    let outcome = train_with(&clips, &dataset.class_labels(), &arch, &config.train, |_| {})?;
    let last = outcome.log.last().cloned().expect("at least one epoch");
    let metrics = BTreeMap::from([("train_loss".to_string(), last.loss), ("train_f1".to_string(), last.f1)]);
    let path = out_path(args.out, "model.ckpt");
    checkpoint::save(&path, &outcome.params, &config.train, last.epoch + 1, metrics)?;
    Ok(json!({
        "command": "train",
        "checkpoint": path,
        "representation": config.representation,
        "dims": config.input_dims,
        "epochs": last.epoch + 1,
        "train_loss": last.loss,
        "train_f1": last.f1,
    }))
}

fn eval(args: EvalArgs) -> Result<serde_json::Value> {
    let config = experiment_config(&args.model)?;
    let (_, params) = checkpoint::load(&args.checkpoint)?;
    let dims = InputDims::new(params.arch.input_h, params.arch.input_w);
    harness::validate_arm(config.representation, dims)?;
    let dataset = config.dataset.load()?;
    let clips = preprocess_all(&dataset.clips, config.representation, dims)?;
    let indices: Vec<usize> = (0..clips.len()).collect();
    let predictions = evaluate_clips(&params, &clips, &dataset, &indices, config.localization)?;
    let summary = summarize(&predictions);
    let path = out_path(args.out, "eval.json");
    write_json(&path, &json!({ "summary": summary, "predictions": predictions }))?;
    Ok(json!({
        "command": "eval",
        "path": path,
        "representation": config.representation,
        "dims": dims,
        "summary": summary,
    }))
}

fn sweep(args: SweepArgs) -> Result<serde_json::Value> {
    let mut config: SweepConfig = read_config(args.config.as_deref())?;
    if let Some(p) = args.input {
        config.dataset = DatasetSource::Path(p);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(k) = args.folds {
        config.folds = k;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.train.learning_rate = lr;
    }
    if args.rep.is_some() || args.dims.is_some() {
        config
            .arms
            .retain(|a| args.rep.is_none_or(|r| a.representation == r) && args.dims.is_none_or(|d| a.dims == d));
        let labels: Vec<String> = config.arms.iter().map(|a| a.label()).collect();
        config.comparisons.retain(|(a, b)| labels.contains(a) && labels.contains(b));
        if config.arms.is_empty() {
            return Err(CliError::Usage("no sweep arm matches --rep/--dims".into()));
        }
    }
    config.validate()?;
    let dataset = config.dataset.load()?;
    let quiet = args.quiet;
    let report = run_sweep_on(&config, &dataset, |p| {
        if let (false, Progress::Fold { label, fold, summary }) = (quiet, p) {
            eprintln!("{label} fold {fold}: F1 {:.2}", summary.f1);
        }
    })?;
    let dir = args.out.unwrap_or_else(out_dir);
    let mut files = Vec::new();
    for format in ReportFormat::ALL {
        let path = dir.join(format!("report.{}", format.extension()));
        emit_report(&report, format, &path)?;
        files.push(path);
    }
    let arms: BTreeMap<&str, f64> = report.arms.iter().map(|a| (a.label.as_str(), a.mean_f1)).collect();
    Ok(json!({ "command": "sweep", "files": files, "mean_f1": arms }))
}

fn report(args: ReportArgs) -> Result<serde_json::Value> {
    let text = fs::read_to_string(&args.input).map_err(|e| bline_core::Error::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let report = harness::report::from_json(&text)?;
    let dir = args.out.unwrap_or_else(out_dir);
    let mut files = Vec::new();
    for format in args.format.0 {
        let path = dir.join(format!("report.{}", format.extension()));
        emit_report(&report, format, &path)?;
        files.push(path);
    }
    Ok(json!({
        "command": "report",
        "files": files,
        "recomputation_error": report.recomputation_error(),
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Resample(a) => resample(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    }
}

fn fail(err: &CliError) -> ExitCode {
    let line = json!({ "error": { "kind": err.kind(), "message": err.to_string() } });
    eprintln!("{line}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.kind().to_string() + ": " + e.render().to_string().trim())),
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
