//! `churnforge`: synthesize, featurize, train, evaluate and score churn data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure of one invocation, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flags, configuration, or inputs that do not fit together (exit 2).
    Usage(String),
    /// Failure while doing the work (exit 1, or 2 for usage-class errors).
    Run(churnforge::Error),
}

impl From<churnforge::Error> for CliError {
    fn from(e: churnforge::Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_usage() => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{}", e),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "churnforge", version, about = "Churn prediction engine: synthetic data, features, classical and deep models, per-week evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic transactions with planted churn dynamics.
    Synth(SynthArgs),
    /// Aggregate transactions into daily rows and labelled window datasets.
    Features(FeaturesArgs),
    /// Train a classical or deep model on a features directory.
    Train(TrainArgs),
    /// Per-week ROC/PR evaluation of a trained model.
    Evaluate(EvaluateArgs),
    /// Score windows with a trained model.
    Predict(PredictArgs),
    /// Finite-difference verification of every tensor operation and architecture.
    Gradcheck(GradcheckArgs),
    /// Render SVG plots from curve CSV files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub users: Option<u64>,
    /// Signal strength in [0, 1].
    #[arg(long)]
    pub signal: Option<f64>,
    /// Target negative:positive ratio of week-1 labels.
    #[arg(long)]
    pub skew: Option<f64>,
    /// Behaviour preset: level or temporal.
    #[arg(long)]
    pub dynamics: Option<String>,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Transactions CSV, or a directory containing transactions.csv.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Feature schema JSON.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `features`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Architecture (vgg_cnn, cnn_full_width, cnn_full_height, lstm, transformer, inception_resnet, convnext, linear) or lr, rf, gbt.
    #[arg(long)]
    pub model: Option<String>,
    /// desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// bce or squared_error.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model checkpoint or classical model JSON.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Window dataset file, or a features directory (its test part is used).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Normalization statistics; defaults to normalization.json beside the model.
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model checkpoint or classical model JSON.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Window dataset file, or a features directory (its test part is used).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Normalization statistics; defaults to normalization.json beside the model.
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check the tensor operations only.
    #[arg(long)]
    pub ops_only: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding roc_w*.csv / pr_w*.csv files.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}
