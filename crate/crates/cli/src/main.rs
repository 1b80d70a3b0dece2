//! `qpflow` command-line experiment runner.
//!
//! Exit codes: 0 success, 2 usage, 3 file access, 4 parse or validation,
//! 5 power flow not converged, 6 singular Jacobian, 7 any other failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpflow::qsim::Spin;

#[derive(Debug, Parser)]
#[command(
    name = "qpflow",
    version,
    about = "Power flow, collision-model activations and beta-tanh networks"
)]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving all outputs (default `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run single-threaded. Results are identical either way.
    #[arg(long, global = true)]
    pub serial: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Newton-Raphson power flow of a network file.
    Solve(SolveArgs),
    /// Randomized-load dataset with a train/test split.
    Dataset(DatasetArgs),
    /// Collision-model transfer curves and beta fits.
    #[command(subcommand)]
    Activation(ActivationCommand),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// MSE and per-output MAPE of a saved model.
    Evaluate(EvaluateArgs),
    /// Train over a grid of betas, optimizers and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Network JSON (the built-in 4-bus network when omitted).
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Start from the voltages in the bus records instead of 1∠0.
    #[arg(long)]
    pub from_records: bool,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Network JSON (the built-in 4-bus network when omitted).
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Multiplier bounds as `low,high`.
    #[arg(long, value_delimiter = ',')]
    pub range: Option<Vec<f64>>,
    /// Training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    /// `standard` or `minmax`.
    #[arg(long)]
    pub scaler: Option<String>,
    /// One multiplier per bus for both P and Q.
    #[arg(long)]
    pub coupled: bool,
    #[arg(long)]
    pub perturb_all_loads: bool,
}

#[derive(Debug, Subcommand)]
pub enum ActivationCommand {
    /// Sweep the two-reservoir input and fit tanh(beta u).
    Simulate(SimulateArgs),
    /// Fit beta to an existing `u,sigma_z` curve file.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Spin numbers, e.g. `1/2,1,3/2,5/2`.
    #[arg(long, value_delimiter = ',')]
    pub spin: Option<Vec<Spin>>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub collisions: Option<usize>,
    /// `exact` or `second-order`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Use the weighted-random schedule seeded by `--seed`.
    #[arg(long)]
    pub random_schedule: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header and `u,sigma_z` leading columns.
    pub curve: PathBuf,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// `table3` or `table4`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Drop biases (strict `I = W Y` layers).
    #[arg(long)]
    pub no_bias: bool,
    /// Scaler used when the dataset metadata does not fix one.
    #[arg(long)]
    pub scaler: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV written by `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, conflicts_with = "spin")]
    pub beta: Option<f64>,
    /// Use the tabulated beta of this spin number.
    #[arg(long)]
    pub spin: Option<Spin>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `train`, `test` or `all`.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub optimizers: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(config::exit_code(&err))
        }
    }
}
