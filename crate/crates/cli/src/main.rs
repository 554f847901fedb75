//! `emission-ldp`: fluid limits, simulation, optimal paths and exact tail
//! checks for the two-level atom emission model.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;
use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "EMISSION_LDP_OUT";

#[derive(Debug, Parser)]
#[command(name = "emission-ldp", version, about)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory [default: $EMISSION_LDP_OUT, then ./out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Master seed for random streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Number of time-grid points.
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Excitation rate λ.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Spontaneous emission rate μ.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// Stimulated emission rate ν.
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    /// Time horizon T.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Number of atoms N.
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Initial excited fraction x1(0).
    #[arg(long = "x1-0", global = true)]
    pub x1_0: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deterministic fluid limit; writes fluid.csv and fluid.dat.
    Fluid,
    /// Exact stochastic simulation; writes trajectory CSVs and summary.json.
    Simulate {
        /// Number of independent runs.
        #[arg(long)]
        n_runs: Option<usize>,
        /// Number of runs whose full trajectories are written.
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Minimal-rate path reaching total emission B; writes the bundle and its header.
    OptimalPath {
        /// Target scaled emission B.
        #[arg(long)]
        b: Option<f64>,
        /// Margin for the chaos gap window [alpha, T − alpha] [default: T/4].
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Exact decay rates of P(emission ≥ ⌈BN⌉) against the variational rate.
    Ldcheck {
        /// Target scaled emission B.
        #[arg(long)]
        b: Option<f64>,
        /// Comma-separated atom counts.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<u64>>,
        /// Largest admissible number of chain states.
        #[arg(long)]
        budget: Option<usize>,
        /// Start from M1(0) ~ Binomial(N, x1_0).
        #[arg(long)]
        binomial: bool,
    },
    /// Optimal paths across emission targets: rate growth, balance and chaos probes.
    BalanceScan {
        /// Comma-separated emission targets.
        #[arg(long, value_delimiter = ',')]
        b_list: Option<Vec<f64>>,
        /// Margin for the chaos gap window [default: T/4].
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Rate functional of a path given as CSV with columns t,x1,x2,x3[,v1,v2,v3].
    Rate {
        /// Path CSV.
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    commands::dispatch(&cli, &file)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
