use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "corc", version, about = "Conformal risk control and conformal risk training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a threshold from a file of losses and print the result as JSON.
    Calibrate(CalibrateArgs),
    /// Monte Carlo check of the risk guarantee on a built-in task.
    Validate(ValidateArgs),
    /// Conformal risk training from a TOML config.
    Train(TrainArgs),
    /// Grid experiment on the storage task.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as train/cal/test CSV files.
    Generate(GenerateArgs),
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// One loss per line: `step BASE LOC:SIZE ...` or `linear SLOPE`.
    #[arg(long)]
    pub losses: PathBuf,
    /// `const B`, `linear b` or a step function.
    #[arg(long, default_value = "const 1")]
    pub bound: String,
    #[arg(long)]
    pub alpha: f64,
    /// Control CVaR at this level instead of the mean.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Use the entropic risk; needs `--t`.
    #[arg(long, conflicts_with = "delta")]
    pub entropic: bool,
    #[arg(long, conflicts_with_all = ["tune_t", "joint"])]
    pub t: Option<f64>,
    /// Holdout loss file for choosing `t`.
    #[arg(long, value_name = "HOLDOUT", conflicts_with = "joint")]
    pub tune_t: Option<PathBuf>,
    /// Solve for `lambda` and `t` together (linear losses, linear bound).
    #[arg(long)]
    pub joint: bool,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ValidateTaskArg {
    Seg,
    Storage,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RiskArg {
    Mean,
    Cvar,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub task: ValidateTaskArg,
    #[arg(long, value_enum)]
    pub risk: RiskArg,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, required_if_eq("risk", "cvar"))]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub n_cal: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed cvar shift; tuned on an independent holdout otherwise.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, default_value_t = 400)]
    pub holdout: usize,
    /// Per-trial CSV; the summary goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TrainTaskArg {
    Seg,
    Storage,
    Conftr,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TrainTaskArg,
    /// TOML with optional `[train]`, `[seg]`, `[storage]`, `[conftr]` and `[pretrain]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SweepKindArg {
    T,
    N,
    Alpha,
    Delta,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKindArg,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GenerateTaskArg {
    Seg,
    Storage,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub task: GenerateTaskArg,
    /// TOML with the task's generator fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Generate(a) => commands::generate(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("guarantee check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
