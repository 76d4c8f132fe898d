//! Command-line pipeline: `gen`, `train`, `eval`, `explain`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::heads::HeadError;
use crate::model::{Checkpoint, ModelError, Mnnas, SearchMode};
use crate::synth::{load_dataset, DatasetSpec, GeneratorSpec, SynthError};
use crate::trainer::{self, write_metrics_csv, EvalSet, MetricRow, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nodenas", version, about = "Node-specific differentiable graph architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory from a dataset spec.
    Gen(GenArgs),
    /// Train from an experiment config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(CheckpointArgs),
    /// Degree-quintile operation preferences of a checkpoint on a dataset.
    Explain(CheckpointArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset spec (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the train seed; the test split uses seed + 1.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<SearchMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (JSON lines) or dataset directory (uses `test.jsonl`, else `train.jsonl`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Accepted for symmetry; evaluation draws no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where a dataset comes from: a file or directory on disk, or a generator run in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GeneratorSpec>,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub train_data: DataSource,
    #[serde(default)]
    pub eval_data: Vec<DataSource>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Exhausted { .. } | SynthError::Graph(_) => Self::runtime(e.to_string()),
            _ => Self::usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(_) | ModelError::Graph(_) => Self::runtime(e.to_string()),
            _ => Self::usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) | TrainError::Data { .. } => Self::usage(e.to_string()),
            TrainError::Head(HeadError::LabelOutOfRange { .. } | HeadError::MissingLabel) => {
                Self::usage(e.to_string())
            }
            _ => Self::runtime(e.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write_out(path: &Path, f: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    f(path).map_err(|e| CliError::runtime(format!("writing {}: {}", path.display(), e.message)))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

/// Resolves a dataset path: a `.jsonl` file, or a directory holding `file`.
fn dataset_file(path: &Path, file: &str) -> Result<PathBuf, CliError> {
    if path.is_dir() {
        let p = path.join(file);
        if p.is_file() {
            return Ok(p);
        }
        return Err(CliError::usage(format!("{} has no {file}", path.display())));
    }
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    Err(CliError::usage(format!("dataset path {} does not exist", path.display())))
}

impl DataSource {
    /// Checks the source without loading or generating anything.
    pub fn check(&self, default_file: &str) -> Result<(), CliError> {
        match (&self.path, &self.generate) {
            (Some(p), None) => dataset_file(p, default_file).map(|_| ()),
            (None, Some(spec)) => Ok(spec.validate()?),
            _ => Err(CliError::usage(format!("dataset `{}` needs exactly one of `path` or `generate`", self.name))),
        }
    }

    pub fn load(&self, default_file: &str) -> Result<Vec<Graph>, CliError> {
        match (&self.path, &self.generate) {
            (Some(p), None) => Ok(load_dataset(&dataset_file(p, default_file)?)?),
            (None, Some(spec)) => Ok(spec.generate()?),
            _ => Err(CliError::usage(format!("dataset `{}` needs exactly one of `path` or `generate`", self.name))),
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<PathBuf, CliError> {
    let mut spec: DatasetSpec = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.train.seed = seed;
        if let Some(t) = spec.test.as_mut() {
            t.seed = seed.wrapping_add(1);
        }
    }
    spec.validate()?;
    create_dir(&args.out)?;
    Ok(spec.write(&args.out)?)
}

/// Loads and validates an experiment config with command-line overrides applied.
pub fn load_experiment(args: &TrainArgs) -> Result<ExperimentConfig, CliError> {
    let mut exp: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        exp.train.seed = seed;
    }
    if let Some(mode) = args.mode {
        exp.train.model.mode = mode;
    }
    if let Some(epochs) = args.epochs {
        exp.train.epochs = epochs;
    }
    if let Some(out) = &args.out {
        exp.out_dir = Some(out.clone());
    }
    exp.train.validate()?;
    exp.train_data.check("train.jsonl")?;
    for e in &exp.eval_data {
        e.check("test.jsonl")?;
    }
    if exp.out_dir.is_none() {
        return Err(CliError::usage("no output directory: set `out_dir` or pass --out"));
    }
    Ok(exp)
}

/// Trains and writes `report.json`, `metrics.csv` and `checkpoint.json` to the output directory.
pub fn cmd_train(args: &TrainArgs) -> Result<trainer::RunReport, CliError> {
    let exp = load_experiment(args)?;
    let out = exp.out_dir.clone().expect("checked in load_experiment");
    let graphs = exp.train_data.load("train.jsonl")?;
    let mut evals = Vec::new();
    for e in &exp.eval_data {
        evals.push(EvalSet::new(e.name.clone(), e.split.clone(), e.load("test.jsonl")?));
    }
    let outcome = trainer::train(&exp.train, &graphs, &evals)?;
    create_dir(&out)?;
    let ckpt_path = out.join("checkpoint.json");
    write_out(&ckpt_path, |p| outcome.checkpoint().save(p).map_err(CliError::from))?;
    let mut report = outcome.report;
    report.checkpoint = Some(ckpt_path.display().to_string());
    write_out(&out.join("report.json"), |p| report.write_json(p).map_err(CliError::from))?;
    write_out(&out.join("metrics.csv"), |p| write_metrics_csv(p, &report.metrics).map_err(CliError::from))?;
    Ok(report)
}

fn load_checkpoint_and_data(args: &CheckpointArgs) -> Result<(Checkpoint, Vec<Graph>, String), CliError> {
    let file = dataset_file(&args.data, "test.jsonl").or_else(|_| dataset_file(&args.data, "train.jsonl"))?;
    let ckpt = Checkpoint::load(&args.checkpoint)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.checkpoint.display())))?;
    let graphs = load_dataset(&file)?;
    let split = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((ckpt, graphs, split))
}

fn dataset_name(path: &Path) -> String {
    let p = if path.is_dir() { path } else { path.parent().unwrap_or(path) };
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

/// Writes `metrics.csv` for a checkpoint on a dataset.
pub fn cmd_eval(args: &CheckpointArgs) -> Result<Vec<MetricRow>, CliError> {
    let (ckpt, graphs, split) = load_checkpoint_and_data(args)?;
    let metrics = trainer::evaluate_checkpoint(&ckpt, &graphs)?;
    let task = ckpt.task.expect("evaluate_checkpoint requires a task");
    let run_id = format!("eval-{}-{}-s{}", task.name(), ckpt.config.mode.name(), ckpt.seed);
    let dataset = dataset_name(&args.data);
    let rows: Vec<MetricRow> = metrics
        .metrics
        .iter()
        .map(|(k, &v)| (k.as_str(), v))
        .chain(std::iter::once(("loss", metrics.loss)))
        .map(|(metric, value)| MetricRow {
            run_id: run_id.clone(),
            task: task.name().into(),
            dataset: dataset.clone(),
            split: split.clone(),
            metric: metric.into(),
            value,
            seed: ckpt.seed,
            epoch: 0,
        })
        .collect();
    create_dir(&args.out)?;
    write_out(&args.out.join("metrics.csv"), |p| write_metrics_csv(p, &rows).map_err(CliError::from))?;
    Ok(rows)
}

/// Writes `preferences.csv`: 5 degree groups by K operations.
pub fn cmd_explain(args: &CheckpointArgs) -> Result<trainer::PreferenceTable, CliError> {
    let (ckpt, graphs, _) = load_checkpoint_and_data(args)?;
    let model = Mnnas::from_checkpoint(&ckpt)?;
    let table = trainer::explain(&model, &graphs)?;
    create_dir(&args.out)?;
    write_out(&args.out.join("preferences.csv"), |p| {
        let f = fs::File::create(p).map_err(|e| CliError::runtime(e.to_string()))?;
        table.write_csv(f).map_err(CliError::from)
    })?;
    Ok(table)
}

/// Runs a parsed command, printing a one-line summary. Returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|dir| println!("wrote {}", dir.display())),
        Command::Train(a) => cmd_train(a).map(|r| {
            println!("{}: {} epochs in {:.1}s", r.run_id, r.epochs.len(), r.wall_clock_seconds);
            for m in r.metrics.iter().filter(|m| m.epoch == r.epochs.len()) {
                println!("  {}/{} {} = {:.4}", m.dataset, m.split, m.metric, m.value);
            }
        }),
        Command::Eval(a) => cmd_eval(a).map(|rows| {
            for m in rows {
                println!("{}/{} {} = {:.4}", m.dataset, m.split, m.metric, m.value);
            }
        }),
        Command::Explain(a) => cmd_explain(a).map(|t| {
            println!("degree_group,{}", t.op_names.join(","));
            for (g, row) in t.rows.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                println!("{g},{}", cells.join(","));
            }
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
