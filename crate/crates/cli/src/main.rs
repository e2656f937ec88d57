//! `bde`: train, query and benchmark posterior ensembles from the command line.

mod benchmark;
mod predict;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use bde_core::BdeError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bde", version, about = "Bayesian deep ensembles for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an ensemble on a CSV file and write a model container.
    Train(TrainArgs),
    /// Posterior-predictive summaries for every row of a CSV file.
    Predict(PredictArgs),
    /// Run the shipped synthetic suites and write metrics.csv.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Target column. Repeat or comma-separate for several regression targets.
    #[arg(long, required = true, value_delimiter = ',')]
    pub target: Vec<String>,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Add a predictive standard deviation column.
    #[arg(long)]
    pub mean_std: bool,
    /// Lower and upper quantile levels, e.g. `0.1,0.9`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub intervals: Option<Vec<f64>>,
    /// Also write per-sample head outputs to this CSV.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::Synthetic)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SuiteArg {
    /// Linear, heteroscedastic sine and Friedman problems at full budget.
    Synthetic,
    /// Same problems with small data and sampling budgets, for quick checks.
    Smoke,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &BdeError) -> u8 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else if matches!(err, BdeError::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => train::run(&args),
        Command::Predict(args) => predict::run(&args),
        Command::Benchmark(args) => benchmark::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
