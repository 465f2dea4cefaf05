//! Subcommand drivers and the helpers they share.

pub mod areal;
pub mod experiments;
pub mod models;
pub mod simulate;

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use nngp::{CovarianceSpec, KernelFamily, NngpError, OrderingStrategy};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Table;

use crate::io::{write_json, Manifest, OutputDir};
use crate::{config, UsageError};

/// Per-invocation state: resolved seed, output directory and config file.
pub struct Run {
    pub command: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub out: OutputDir,
    file: Option<Table>,
    start: Instant,
}

impl Run {
    pub fn new(command: &'static str, seed: u64, threads: usize, out_dir: &Path, file: Option<Table>) -> Result<Self> {
        Ok(Self {
            command,
            seed,
            threads,
            out: OutputDir::create(out_dir)?,
            file,
            start: Instant::now(),
        })
    }

    pub fn params<P, F>(&self, flags: &F) -> Result<P>
    where
        P: Default + Serialize + DeserializeOwned,
        F: Serialize,
    {
        config::resolve(self.command, self.file.as_ref(), flags).map_err(|e| UsageError(format!("{e:#}")).into())
    }

    /// Writes `manifest.json` listing the parameters and every output file.
    pub fn finish<P: Serialize>(mut self, params: &P) -> Result<()> {
        let wall = self.start.elapsed().as_secs_f64();
        let path = self.out.path("manifest.json");
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            threads: self.threads,
            parameters: params,
            wall_time_seconds: wall,
            outputs: self.out.written(),
        };
        write_json(&path, &manifest)
    }
}

/// Kernel and covariance parameters shared by several commands.
#[derive(Debug, Default, Args, Serialize)]
pub struct KernelFlags {
    /// Covariance family: exponential, matern32 or gaussian.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Partial sill.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Nugget.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
}

pub fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(UsageError(msg.into()).into())
    }
}

/// Library validation failures are the caller's fault.
pub fn usage<T>(r: nngp::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        NngpError::InvalidParameter(_) | NngpError::InvalidGraph(_) => UsageError(e.to_string()).into(),
        other => other.into(),
    })
}

pub fn kernel(name: &str) -> Result<KernelFamily> {
    usage(name.parse())
}

pub fn spec(family: &str, sigma2: f64, phi: f64, tau2: f64) -> Result<CovarianceSpec> {
    usage(CovarianceSpec::new(kernel(family)?, sigma2, phi, tau2))
}

/// `coordinate` or `random`; the random permutation is seeded by `seed`.
pub fn ordering(name: &str, seed: u64) -> Result<OrderingStrategy> {
    match name.to_ascii_lowercase().as_str() {
        "coordinate" | "coord" => Ok(OrderingStrategy::CoordinateSort),
        "random" => Ok(OrderingStrategy::Random(seed)),
        other => Err(UsageError(format!("unknown ordering '{other}' (expected coordinate or random)")).into()),
    }
}
