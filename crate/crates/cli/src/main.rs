//! `btd`: block-term decomposition with rank estimation, and the experiment harness.
//!
//! Exit codes: 0 success (solver converged), 3 solver stopped at the iteration cap,
//! 2 usage error, 1 any other error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use btd::BtdError;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "btd", version, about = "Rank-(L,L,1) block-term decomposition with rank estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Decompose a tensor file (T3 or triplet text).
    Decompose(DecomposeArgs),
    /// Write a synthetic BTD tensor, optionally with noise, plus its true factors.
    Synth(SynthArgs),
    /// Block NMSE against SNR for HIRLS and the ALS baseline.
    BenchSnr(BenchSnrArgs),
    /// Rank-recovery frequencies over many noisy realizations.
    BenchRank(BenchRankArgs),
    /// Per-iteration NMSE and objective of HIRLS runs.
    Trace(TraceArgs),
    /// Low-rank BTD approximation of a noisy cube, with per-band SSIM.
    Denoise(DenoiseArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum UpdateModeArg {
    GaussSeidel,
    Simultaneous,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PruneArg {
    Off,
    Blocks,
    #[value(name = "blocks+columns")]
    BlocksColumns,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Product,
    Majorizer,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Hirls,
    Als,
}

/// Solver settings shared by every command. Unset values fall back to the command's
/// defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed regularization weight.
    #[arg(long, conflicts_with = "sigma_hat")]
    pub lambda: Option<f64>,
    /// Noise level guess for the rule λ = L_ini·R_ini·(I+J+K)·σ̂.
    #[arg(long)]
    pub sigma_hat: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub r_ini: Option<usize>,
    #[arg(long)]
    pub l_ini: Option<usize>,
    #[arg(long, value_enum)]
    pub update_mode: Option<UpdateModeArg>,
    #[arg(long, value_enum)]
    pub prune: Option<PruneArg>,
    #[arg(long)]
    pub block_tol: Option<f64>,
    #[arg(long)]
    pub col_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key = value` file with defaults for any flag of the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    pub tensor: PathBuf,
    #[arg(long, value_enum, default_value = "hirls")]
    pub algo: Algo,
    /// Number of blocks for ALS.
    #[arg(long = "R")]
    pub r: Option<usize>,
    /// Block ranks for ALS; one value is used for every block.
    #[arg(long = "L", value_delimiter = ',')]
    pub l: Vec<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// `I,J,K`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Block ranks `L_1,…,L_R`.
    #[arg(long, value_delimiter = ',', conflicts_with = "r")]
    pub ranks: Vec<usize>,
    /// Number of blocks, with ranks drawn from `--l-range`.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,9")]
    pub l_range: Vec<usize>,
    /// SNR in dB; without it only the clean tensor is written.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct BenchSnrArgs {
    #[arg(long, value_delimiter = ',', default_value = "60,50,55")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub r: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,9")]
    pub l_range: Vec<usize>,
    /// SNRs in dB (`inf` for noise-free).
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
    pub snrs: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// `L` of every ALS block; 0 skips the baseline.
    #[arg(long, default_value_t = 10)]
    pub als_l: usize,
    /// σ̂ for the λ rule as a multiple of the realized noise level.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct BenchRankArgs {
    /// 1: `L = 8,6,4`; 2: `L = 9,7,5`. `--ranks` overrides.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: u8,
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "18,18,10")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 15.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long, value_delimiter = ',', default_value = "60,50,55")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub r: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,9")]
    pub l_range: Vec<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 10)]
    pub realizations: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    pub cube: PathBuf,
    /// Clean cube to compare against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Write per-band SSIM (needs `--reference`).
    #[arg(long)]
    pub ssim: bool,
    #[arg(long, default_value_t = btd::metrics::DEFAULT_SSIM_WINDOW)]
    pub ssim_window: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Solver outcome that maps onto the process exit code.
pub enum Outcome {
    Done,
    IterationCap,
}

fn run() -> Result<Outcome> {
    let args = config::merge_config_file(&Cli::command(), std::env::args_os().collect())?;
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Cmd::Decompose(a) => commands::decompose(a),
        Cmd::Synth(a) => commands::synth(a),
        Cmd::BenchSnr(a) => commands::bench_snr(a),
        Cmd::BenchRank(a) => commands::bench_rank(a),
        Cmd::Trace(a) => commands::trace(a),
        Cmd::Denoise(a) => commands::denoise(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::IterationCap) => {
            eprintln!("btd: stopped at the iteration cap before meeting the tolerance");
            ExitCode::from(3)
        }
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                // help and version requests also arrive here
                let _ = clap_err.print();
                return ExitCode::from(clap_err.exit_code() as u8);
            }
            eprintln!("btd: {e:#}");
            if matches!(e.downcast_ref::<BtdError>(), Some(BtdError::Usage(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
