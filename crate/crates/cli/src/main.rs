//! `vidswin` command line: parameter counts and the four pipeline stages.
//!
//! Every command prints one JSON object on stdout. Failures print
//! `{"error": "..."}` on one line and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use vidswin::backbone::{count_parameters, random_weights, ModelConfig, Variant};
use vidswin::config::{ModelSection, RunConfig};
use vidswin::pipeline::{self, RunDir};
use vidswin::report::ReportOptions;
use vidswin::synthetic::write_synthetic_dataset;
use vidswin::weights_io;

#[derive(Parser)]
#[command(name = "vidswin", version, about = "Video Swin feature extraction, linear probing and error analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact parameter count of a variant or config (head included).
    ParamCount(ModelArgs),
    /// Sample clips, run the frozen backbone and cache the features.
    ExtractFeatures(ExtractArgs),
    /// Fit the linear head on cached features.
    TrainProbe(TrainArgs),
    /// Predict every manifest video and write the prediction log.
    Evaluate(EvaluateArgs),
    /// Bin, correlate and chart the prediction log.
    Analyze(AnalyzeArgs),
    /// Write randomly initialized weights as SWPT.
    InitWeights(InitArgs),
    /// Write the separable synthetic dataset plus a matching run config.
    SynthDataset(SynthArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    variant: Option<String>,
    /// Model config JSON, or a run config whose `model` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Head size for a named variant.
    #[arg(long, default_value_t = vidswin::config::DEFAULT_NUM_CLASSES)]
    num_classes: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed; required without --config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// Run directory holding the stage artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    out: PathBuf,
    /// Only the `analysis` section is read.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON file holding a list of class groups, e.g. [["a","b"]].
    #[arg(long)]
    merge_groups: Option<PathBuf>,
    /// Keep only videos with a true label starting with this prefix.
    #[arg(long)]
    class_filter: Option<String>,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 24)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Paths a command reads and writes, checked before any work starts.
struct RunManifest {
    subcommand: &'static str,
    config: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
}

impl RunManifest {
    fn validate(&self) -> Result<()> {
        for p in self.config.iter().chain(&self.inputs) {
            if !p.is_file() {
                bail!("{}: missing input {}", self.subcommand, p.display());
            }
        }
        if self.out.is_file() {
            bail!("{}: output {} is a file, expected a directory", self.subcommand, self.out.display());
        }
        info!(
            "{}: config {:?}, inputs {:?}, out {}, seed {:?}",
            self.subcommand,
            self.config,
            self.inputs,
            self.out.display(),
            self.seed
        );
        Ok(())
    }
}

fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let cfg = match (&args.variant, &args.config) {
        (Some(v), _) => v.parse::<Variant>()?.config(args.num_classes),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: Value = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
            if value.get("embed_dim").is_some() {
                serde_json::from_value(value).with_context(|| path.display().to_string())?
            } else if let Some(model) = value.get("model") {
                let section: ModelSection =
                    serde_json::from_value(model.clone()).with_context(|| path.display().to_string())?;
                section.resolve().map_err(|e| anyhow!("{}: {e}", path.display()))?
            } else {
                bail!("{}: expected a model config (embed_dim, depths, ...) or a run config with a `model` section", path.display());
            }
        }
        (None, None) => bail!("--variant or --config required"),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, args.seed) {
        (Some(path), _) => RunConfig::load(path).map_err(|e| anyhow!(e))?,
        (None, Some(seed)) => RunConfig::from_json(&json!({ "seed": seed }).to_string()).map_err(|e| anyhow!(e))?,
        (None, None) => bail!("a seed is required: pass --config or --seed"),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(v) = &args.variant {
        cfg.model.variant = Some(v.clone());
        cfg.model.config = None;
    }
    Ok(cfg)
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn param_count(args: &ModelArgs) -> Result<Value> {
    let cfg = model_config(args)?;
    let n = count_parameters(&cfg);
    Ok(json!({
        "variant": args.variant.clone().unwrap_or_else(|| "custom".into()),
        "parameters": n,
        "millions": millions(n),
    }))
}

fn extract(args: &ExtractArgs) -> Result<Value> {
    RunManifest {
        subcommand: "extract-features",
        config: args.run.config.clone(),
        inputs: vec![args.manifest.clone(), args.weights.clone()],
        out: args.run.out.clone(),
        seed: args.run.seed,
    }
    .validate()?;
    let mut cfg = run_config(&args.run)?;
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate().map_err(|e| anyhow!(e))?;
    let summary = pipeline::run_extract(&cfg, &args.manifest, &args.weights, &RunDir::new(&args.run.out))?;
    Ok(serde_json::to_value(summary)?)
}

fn train(args: &TrainArgs) -> Result<Value> {
    RunManifest {
        subcommand: "train-probe",
        config: args.run.config.clone(),
        inputs: Vec::new(),
        out: args.run.out.clone(),
        seed: args.run.seed,
    }
    .validate()?;
    let cfg = run_config(&args.run)?;
    cfg.validate().map_err(|e| anyhow!(e))?;
    let summary = pipeline::run_train(&cfg, &RunDir::new(&args.run.out))?;
    Ok(serde_json::to_value(summary)?)
}

fn evaluate(args: &EvaluateArgs) -> Result<Value> {
    RunManifest {
        subcommand: "evaluate",
        config: None,
        inputs: vec![args.manifest.clone()],
        out: args.out.clone(),
        seed: None,
    }
    .validate()?;
    let summary = pipeline::run_evaluate(&args.manifest, &RunDir::new(&args.out))?;
    Ok(serde_json::to_value(summary)?)
}

fn analyze(args: &AnalyzeArgs) -> Result<Value> {
    RunManifest {
        subcommand: "analyze",
        config: args.config.clone(),
        inputs: args.merge_groups.iter().cloned().collect(),
        out: args.out.clone(),
        seed: None,
    }
    .validate()?;
    let mut opts = match &args.config {
        Some(path) => analysis_section(path)?,
        None => ReportOptions::default(),
    };
    if let Some(path) = &args.merge_groups {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        opts.merge_groups = serde_json::from_str(&text).with_context(|| format!("{}: expected [[\"class\", ...], ...]", path.display()))?;
    }
    if args.class_filter.is_some() {
        opts.class_filter = args.class_filter.clone();
    }
    let summary = pipeline::run_analyze(&opts, &RunDir::new(&args.out))?;
    Ok(serde_json::to_value(summary)?)
}

/// Analysis options of a run config; the seed is not needed here.
fn analysis_section(path: &Path) -> Result<ReportOptions> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
    match value.get("analysis") {
        Some(a) => Ok(serde_json::from_value(a.clone()).with_context(|| format!("{}: analysis", path.display()))?),
        None => Ok(ReportOptions::default()),
    }
}

fn init_weights(args: &InitArgs) -> Result<Value> {
    let cfg = model_config(&args.model)?;
    let w = random_weights(&cfg, args.seed);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    weights_io::save_file(&w, &args.out)?;
    Ok(json!({
        "path": args.out,
        "tensors": w.len(),
        "parameters": w.scalar_count(),
        "checksum": w.checksum(),
    }))
}

fn synth_dataset(args: &SynthArgs) -> Result<Value> {
    let manifest = write_synthetic_dataset(&args.out, args.videos, args.seed)?;
    let config = args.out.join("desk.json");
    let desk = serde_json::to_string_pretty(&RunConfig::desk(args.seed))?;
    fs::write(&config, desk).with_context(|| format!("writing {}", config.display()))?;
    Ok(json!({
        "manifest": args.out.join("manifest.jsonl"),
        "config": config,
        "videos": manifest.len(),
        "classes": manifest.label_vocabulary(),
    }))
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::ParamCount(a) => param_count(a),
        Command::ExtractFeatures(a) => extract(a),
        Command::TrainProbe(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::InitWeights(a) => init_weights(a),
        Command::SynthDataset(a) => synth_dataset(a),
    }
}

fn fail(message: String, code: u8) -> ExitCode {
    println!("{}", json!({ "error": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let body = text.split("Usage:").next().unwrap_or_default();
            let line = body.split_whitespace().collect::<Vec<_>>().join(" ");
            return fail(line.trim_start_matches("error: ").to_string(), 2);
        }
    };
    match run(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(format!("{e:#}"), 1),
    }
}
