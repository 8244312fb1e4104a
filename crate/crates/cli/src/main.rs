//! `prognosis`: synthesize a corpus, preprocess, train, evaluate and predict.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prognosis_core::eval::Aggregation;

#[derive(Parser, Debug)]
#[command(name = "prognosis", version = manifest::VERSION, about = "EEG-based outcome prediction after cardiac arrest")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset of good- and poor-outcome patients.
    Synthesize(SynthesizeArgs),
    /// Preprocess a dataset into a segment cache that `train` can read.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoints, metrics and a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write report.json and patients.csv.
    Evaluate(EvaluateArgs),
    /// Print one JSON prediction per patient.
    Predict(PredictArgs),
    /// Inspect the bipolar montage.
    Montage {
        #[command(subcommand)]
        action: MontageAction,
    },
    /// Print a preset's model and training configuration as JSON.
    Config {
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Compare autodiff gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand, Debug)]
enum MontageAction {
    /// List the bipolar pairs as CSV.
    List,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    good: usize,
    #[arg(long)]
    poor: usize,
    #[arg(long, default_value_t = 1)]
    hours: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sampling rate of the written recordings.
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    /// Length of each recording; shorter than an hour is handy for smoke tests.
    #[arg(long, default_value_t = 3600.0)]
    seconds: f64,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset root, or a cache written by `preprocess`.
    #[arg(long, required_unless_present = "dry_run")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "desk", conflicts_with = "config")]
    preset: String,
    /// JSON file with optional `model` and `train` objects; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Run directory; defaults to `$PROGNOSIS_RUNS_DIR/<preset>-seed<seed>` (runs root `runs`).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Build the model, run one forward pass and report its size without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Val,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Patients to score; `train`/`val` use the split stored in the checkpoint.
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
    #[arg(long, default_value = "mean")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Fail unless the checkpoint was built with this preset's architecture.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Patient directories, dataset roots or `.hdr.json` recording headers.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// `poor_prob >= threshold` is reported as Poor.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "mean")]
    aggregation: Aggregation,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model parameters to probe on the desk configuration.
    #[arg(long, default_value_t = 200)]
    coords: usize,
    /// Only run the per-operation suite.
    #[arg(long)]
    ops_only: bool,
}

/// Errors the user can fix by changing the command line.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Montage { action: MontageAction::List } => commands::montage_list(),
        Command::Config { preset } => commands::config(&preset),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
