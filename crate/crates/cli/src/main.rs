//! `aqa`: train, evaluate and ensemble multi-axis audio quality predictors
//! on precomputed embeddings.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aqa_core::ErrorClass;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "aqa",
    version,
    about = "Multi-axis audio quality regression on precomputed embeddings"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a known generating map.
    Synth(SynthArgs),
    /// Split a manifest 80/20 (or --fraction) stratified by system.
    Split(SplitArgs),
    /// Train one model or an ablation grid into a run directory.
    Train(TrainArgs),
    /// Predict a manifest with one checkpoint.
    Predict(PredictArgs),
    /// Score a prediction dump against a labeled manifest.
    Evaluate(EvaluateArgs),
    /// Choose ensemble members from a leaderboard.
    EnsembleSelect(SelectArgs),
    /// Average the members of an ensemble spec over a manifest.
    EnsemblePredict(EnsemblePredictArgs),
    /// Compare the standard selection strategies on a labeled manifest.
    EnsembleCompare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (embeddings, manifest.jsonl, generating_map.json).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML corpus spec; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clip seed (overrides the file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generating-map seed; share it to draw a second corpus with the same
    /// label function.
    #[arg(long)]
    pub map_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for train.jsonl and dev.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config with [data], [model], [train] and optional [grid].
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training and model-init seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated encoder ids.
    #[arg(long, value_delimiter = ',')]
    pub encoders: Option<Vec<String>>,
    /// mlp, blstm_h or blstm_t.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// con, ut, dcq or ccc.
    #[arg(long)]
    pub loss: Option<String>,
    /// Train a grid preset (table or cross) instead of one model.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Prediction dump (TSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction dump (TSV).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Labeled manifest covering exactly the predicted utterances.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Metric report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub leaderboard: PathBuf,
    /// intersection, topk-pam, topk-dev, all or explicit.
    #[arg(long, default_value = "intersection")]
    pub strategy: String,
    #[arg(long, default_value_t = 12)]
    pub k_dev: usize,
    #[arg(long, default_value_t = 12)]
    pub k_pam: usize,
    /// k of the top-k strategies.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Members of the explicit strategy, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub members: Option<Vec<String>>,
    /// Ensemble spec (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsemblePredictArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub leaderboard: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Prediction dump (TSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub leaderboard: PathBuf,
    /// Labeled manifest to score every strategy on.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Spec of the submitted ensemble; defaults to intersection(12, 12).
    #[arg(long)]
    pub submitted: Option<PathBuf>,
    /// Strategy table (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::DataFormat => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::EnsembleSelect(a) => commands::ensemble_select(&a),
        Command::EnsemblePredict(a) => commands::ensemble_predict(&a),
        Command::EnsembleCompare(a) => commands::ensemble_compare(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
