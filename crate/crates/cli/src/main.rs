mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treemax::mdp::{Regime, RewardMode};
use treemax::trainer::EnvKind;
use treemax::{TreeMaxError, Variant};

/// Exact tabular SoftTreeMax experiments.
#[derive(Debug, Parser)]
#[command(name = "treemax", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random MDP with a prescribed behavior-chain regime.
    GenMdp(GenMdpArgs),
    /// Exact variance depth sweep over regimes and seeds.
    Sweep(SweepArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Train tabular scores with REINFORCE on a toy environment.
    Train(TrainArgs),
    /// Spectral summary, policy and variance of one MDP file.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenMdpArgs {
    #[arg(long)]
    pub states: usize,
    #[arg(long)]
    pub actions: usize,
    #[arg(long, default_value = "random")]
    pub regime: Regime,
    /// Mixing weight; defaults to 0.05 / 0.1 / 0.02 for uniform / random / permutation.
    #[arg(long)]
    pub mix: Option<f64>,
    #[arg(long, default_value = "state_action")]
    pub rewards: RewardMode,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated regimes.
    #[arg(long, value_delimiter = ',', default_value = "uniform,random,permutation")]
    pub regimes: Vec<Regime>,
    /// MDP files written by `gen-mdp`; replaces the regime generator.
    #[arg(long = "mdp", value_delimiter = ',')]
    pub mdp_files: Vec<PathBuf>,
    /// Mixing weight for every regime (per-regime defaults otherwise).
    #[arg(long)]
    pub mix: Option<f64>,
    /// First seed.
    #[arg(long)]
    pub seed: u64,
    /// Number of consecutive seeds per regime.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub actions: usize,
    /// Defaults to `state_action` for C and `state` for E.
    #[arg(long)]
    pub rewards: Option<RewardMode>,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "C")]
    pub variant: Variant,
    /// `lo..hi` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..8")]
    pub depths: String,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Optional log-scale line chart of the normalized curves.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Optional per-instance fitted-rate ratios (E variant only).
    #[arg(long)]
    pub ratios: Option<PathBuf>,
    /// Worker threads; `TREEMAX_JOBS` overrides. Defaults to the logical core count.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Instances per variant.
    #[arg(long, default_value_t = 50)]
    pub suite: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Negate one entry of every C gradient before comparing.
    #[arg(long)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `chain`, `chain:k` or `grid`.
    #[arg(long, default_value = "chain")]
    pub env: EnvKind,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub horizon: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also train the depth-0 softmax and write `<stem>.baseline.csv`.
    #[arg(long)]
    pub baseline: bool,
    /// Record real wall-clock milliseconds (otherwise the column is 0).
    #[arg(long)]
    pub timing: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long, default_value = "C")]
    pub variant: Variant,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Seed for the score vector.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON output path; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Verification(String),
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verification(m) | CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<TreeMaxError> for CliError {
    fn from(e: TreeMaxError) -> Self {
        match e {
            TreeMaxError::NonMixing { .. }
            | TreeMaxError::LinearSolve(_)
            | TreeMaxError::EigenNonConvergence { .. }
            | TreeMaxError::NegativeVariance(_) => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenMdp(args) => commands::gen_mdp(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Gradcheck(args) => commands::gradcheck(&args),
        Command::Train(args) => commands::train(&args),
        Command::Analyze(args) => commands::analyze(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
