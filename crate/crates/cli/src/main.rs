//! `cfmf`: dataset inspection, single-model training and evaluation, and
//! full benchmark runs.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 I/O error, 4 training diverged, 5 benchmark finished with some models
//! failing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

#[derive(Parser)]
#[command(name = "cfmf", version, about = "Matrix factorization models for collaborative filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print size, scale and sparsity of datasets.
    Stats(StatsArgs),
    /// Train one model and write it to a file.
    Train(TrainArgs),
    /// Cross-validate one configuration, or score a trained model file.
    Evaluate(EvaluateArgs),
    /// Run the hyperparameter grid of every model on every dataset.
    Benchmark(BenchmarkArgs),
    /// Flatten benchmark series into one long CSV.
    ExportPlotData(ExportArgs),
}

#[derive(Args, Clone)]
pub struct DatasetArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name (ml-100k, ml-1m, filmtrust, myanimelist), a file path, or
    /// with --config the name of a configured dataset. Repeatable.
    #[arg(long)]
    pub dataset: Vec<String>,
    /// Format of a dataset given by path: a preset name or a JSON descriptor.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Args, Clone)]
pub struct Hyperparams {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "reg")]
    pub regularization: Option<f64>,
    /// BNMF Dirichlet prior.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// BNMF Beta prior.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Seed of the model's random initialization. Cross-validation derives
    /// per-fold seeds from --split-seed instead.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone)]
pub struct SplitArgs {
    /// Use only the training part of this fold (train) or its held-out
    /// part (evaluate with --model-file).
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub hyper: Hyperparams,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub hyper: Hyperparams,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Score this trained model instead of cross-validating.
    #[arg(long, conflicts_with = "model")]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GridChoice {
    Paper,
    Reduced,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Restrict to these models. Repeatable.
    #[arg(long)]
    pub model: Vec<String>,
    /// Replace the default grid of the plan.
    #[arg(long, value_enum)]
    pub grid: Option<GridChoice>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// No per-model progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    /// A benchmark output directory.
    pub dir: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::code::USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::ExportPlotData(a) => commands::export_plot_data(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
