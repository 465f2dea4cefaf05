//! Command-line harness for the `nngp` library: data I/O, layered
//! configuration and experiment drivers writing tidy CSV and JSON.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::areal::DagarFlags;
use commands::experiments::{BenchFlags, ExperimentFlags, HomoskedasticityFlags};
use commands::models::{BootstrapFlags, FitFlags, RfglsFlags};
use commands::simulate::SimulateFlags;
use commands::Run;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT_DIR: &str = "nngp-out";

/// Invalid invocation: bad flag values, unknown names, missing inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "nngp", version, about = "Nearest-neighbor Gaussian process tools")]
pub struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving the outputs and manifest.json.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML file with default parameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate NNGP random fields and a regression dataset.
    Simulate(SimulateFlags),
    /// Decorrelate dense-GP datasets with the NNGP factor.
    DecorrelateExp(ExperimentFlags),
    /// Compare NNGP and dense simulation covariances.
    SimCompare(ExperimentFlags),
    /// Time NNGP and dense simulation.
    Bench(BenchFlags),
    /// NNGP marginal variances by order index.
    Homoskedasticity(HomoskedasticityFlags),
    /// Maximum likelihood fit and kriging.
    Fit(FitFlags),
    /// Spatial bootstrap intervals for the fitted parameters.
    Bootstrap(BootstrapFlags),
    /// Random forest with spatially decorrelated splits.
    Rfgls(RfglsFlags),
    /// CAR and DAGAR variance and correlation diagnostics.
    Dagar(DagarFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::DecorrelateExp(_) => "decorrelate-exp",
            Command::SimCompare(_) => "sim-compare",
            Command::Bench(_) => "bench",
            Command::Homoskedasticity(_) => "homoskedasticity",
            Command::Fit(_) => "fit",
            Command::Bootstrap(_) => "bootstrap",
            Command::Rfgls(_) => "rfgls",
            Command::Dagar(_) => "dagar",
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let seed = match cli.seed {
        Some(s) => s,
        None => config::top_level(file.as_ref(), "seed")?.unwrap_or(DEFAULT_SEED),
    };
    let threads: Option<usize> = match cli.threads {
        Some(t) => Some(t),
        None => config::top_level(file.as_ref(), "threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(UsageError("threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out_dir = match cli.out_dir {
        Some(d) => d,
        None => config::top_level::<PathBuf>(file.as_ref(), "out_dir")?.unwrap_or_else(|| DEFAULT_OUT_DIR.into()),
    };
    let name = cli.command.name();
    let run = Run::new(name, seed, rayon::current_num_threads(), &out_dir, file)?;
    match &cli.command {
        Command::Simulate(f) => commands::simulate::run(run, f),
        Command::DecorrelateExp(f) => commands::experiments::run_decorrelation(run, f),
        Command::SimCompare(f) => commands::experiments::run_sim_compare(run, f),
        Command::Bench(f) => commands::experiments::run_bench(run, f),
        Command::Homoskedasticity(f) => commands::experiments::run_homoskedasticity(run, f),
        Command::Fit(f) => commands::models::run_fit(run, f),
        Command::Bootstrap(f) => commands::models::run_bootstrap_cmd(run, f),
        Command::Rfgls(f) => commands::models::run_rfgls(run, f),
        Command::Dagar(f) => commands::areal::run(run, f),
    }
}
