use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use nalgebra::DMatrix;
use nngp::experiments::uniform_points;
use nngp::rng::{draw_normals, sub_seed};
use nngp::{build_factor, build_neighbor_graph, order_locations, FactorTarget};
use serde::{Deserialize, Serialize};

use super::{ordering, require, spec, usage, KernelFlags, Run};
use crate::io::{fmt_f64, read_table, write_csv, write_table, GeoTable};

/// Draws latent NNGP fields, plus one regression dataset built on the first draw.
#[derive(Debug, Args, Serialize)]
pub struct SimulateFlags {
    /// Number of locations, drawn uniformly on the unit square.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Neighbors per location.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    /// coordinate or random.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<String>,
    /// CSV with `sx, sy` columns to use instead of random locations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub locations: Option<PathBuf>,
    /// Regression coefficients of the dataset: intercept first, then one
    /// standard normal covariate per further entry.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n: usize,
    pub m: usize,
    pub draws: usize,
    pub ordering: String,
    pub locations: Option<PathBuf>,
    pub beta: Vec<f64>,
    pub kernel: String,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            n: 1000,
            m: 10,
            draws: 1,
            ordering: "coordinate".into(),
            locations: None,
            beta: vec![1.0, 2.0],
            kernel: "exponential".into(),
            sigma2: 1.0,
            phi: 6.0,
            tau2: 0.1,
        }
    }
}

pub fn run(run: Run, flags: &SimulateFlags) -> Result<()> {
    let p: SimulateParams = run.params(flags)?;
    let spec = spec(&p.kernel, p.sigma2, p.phi, p.tau2)?;
    require(p.m >= 1, "m must be at least 1")?;
    require(p.draws >= 1, "draws must be at least 1")?;
    require(!p.beta.is_empty(), "beta needs at least an intercept")?;
    let points = match &p.locations {
        Some(path) => read_table(path, false)?.points,
        None => {
            require(p.n >= 1, "n must be at least 1")?;
            uniform_points(p.n, sub_seed(run.seed, 0))
        }
    };
    let n = points.len();
    let locs = usage(order_locations(&points, ordering(&p.ordering, sub_seed(run.seed, 1))?))?;
    let graph = build_neighbor_graph(&locs, p.m)?;
    let chol = build_factor(&locs, &graph, &spec, FactorTarget::Latent)?;
    let perm = locs.permutation();
    let draws = chol
        .simulate(sub_seed(run.seed, 2), p.draws)
        .iter()
        .map(|d| perm.to_input(d))
        .collect::<nngp::Result<Vec<_>>>()?;

    let mut run = run;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((1..=p.draws).map(|d| format!("draw{d}")));
    let rows = (0..n).map(|i| {
        let mut row = vec![fmt_f64(points[i].x), fmt_f64(points[i].y)];
        row.extend(draws.iter().map(|d| fmt_f64(d[i])));
        row
    });
    write_csv(&run.out.path("draws.csv"), &header, rows)?;

    let k = p.beta.len() - 1;
    let covariates: Vec<Vec<f64>> = (0..k)
        .map(|c| draw_normals(sub_seed(run.seed, 3), c as u64, n))
        .collect();
    let noise = draw_normals(sub_seed(run.seed, 4), 0, n);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let trend: f64 = p.beta[0] + (0..k).map(|c| p.beta[c + 1] * covariates[c][i]).sum::<f64>();
            trend + draws[0][i] + spec.tau2.sqrt() * noise[i]
        })
        .collect();
    let table = GeoTable {
        points,
        y: Some(y),
        x: DMatrix::from_fn(n, k, |i, c| covariates[c][i]),
        covariate_names: (1..=k).map(|c| format!("x{c}")).collect(),
    };
    write_table(&run.out.path("data.csv"), &table)?;
    run.finish(&p)
}
