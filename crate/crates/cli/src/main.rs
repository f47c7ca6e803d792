//! `knowfuse` command-line tool: generate data, train constituents, fuse,
//! evaluate, run split-class experiments and print diagnostics.
//!
//! Machine-readable JSON goes to stdout; errors go to stderr with a nonzero
//! exit status.

mod commands;
mod config;
mod pretty;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] knowfuse::Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    ConfigJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "knowfuse", version, about = "Fuse independently trained networks without retraining")]
pub struct Cli {
    /// Print human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic Gaussian-blob dataset as IDX files.
    GenData(GenDataArgs),
    /// Train a constituent on a class subset and store it with its Fisher.
    Train(TrainArgs),
    /// Fuse two stored models.
    Fuse(FuseArgs),
    /// Evaluate a stored model on a test set.
    Eval(EvalArgs),
    /// Run repeated split-class fusion experiments.
    Experiment(ExperimentArgs),
    /// Sign-preservation estimate and weight statistics.
    Diag(DiagArgs),
}

/// Locations of the IDX files. `--data-dir` expects the standard MNIST names.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.8)]
    pub center_scale: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per class reserved for the test files.
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training config; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Classes to train on, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,
    /// Hidden layer widths, comma separated; `--hidden ''` for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub output_activation: Option<knowfuse::nnet::Activation>,
    #[arg(long)]
    pub loss: Option<knowfuse::nnet::LossKind>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Estimate the Fisher from at most this many training samples.
    #[arg(long)]
    pub fisher_samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    pub model_a: PathBuf,
    pub model_b: PathBuf,
    #[arg(long, default_value = "ewc")]
    pub method: knowfuse::fuse::FusionMethod,
    /// Pair hidden nodes by index instead of solving the assignment.
    #[arg(long, conflicts_with = "align")]
    pub no_align: bool,
    /// Align before weight summation too.
    #[arg(long)]
    pub align: bool,
    /// Per-hidden-layer policy (sum, average, ewc), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<knowfuse::fuse::HiddenPolicy>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value = "presynaptic")]
    pub cost_scope: knowfuse::align::CostScope,
    /// Zero-pad the narrower model's hidden layers to the wider widths.
    #[arg(long)]
    pub pad: bool,
    /// Evaluate the fused model on this test data.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate only on samples of these classes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Also write the summary JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    /// Two model files for weight statistics and dominance ratios.
    #[arg(num_args = 0..=2)]
    pub models: Vec<PathBuf>,
    /// Monte Carlo sign-preservation estimate: N SIGMA_A SIGMA_B SEED.
    #[arg(long, num_args = 4, value_names = ["N", "SIGMA_A", "SIGMA_B", "SEED"])]
    pub peq: Option<Vec<String>>,
    /// Probe inputs for the dominance ratios.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub max_probes: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.text);
            match out.aborted {
                None => ExitCode::SUCCESS,
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(3)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
