//! Desk-scale experiment drivers writing tidy CSV for plotting.

use anyhow::Result;
use clap::Args;
use nalgebra::DMatrix;
use nngp::experiments::{
    bench, decorrelation_experiment, density_histogram, homoskedasticity, matched_spec, sim_compare, BenchConfig,
    BenchMethod, DecorrelationConfig, HomoskedasticityConfig, SimCompareConfig,
};
use nngp::{CovarianceSpec, KernelFamily};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{kernel, require, usage, KernelFlags, Run};
use crate::io::{fmt_f64, write_csv, write_json};

/// Flags shared by the dense-baseline experiments.
#[derive(Debug, Args, Serialize)]
pub struct ExperimentFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Monte Carlo replicates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Treat `phi` as an exponential decay and rescale it to the chosen
    /// kernel's effective range.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_range: Option<bool>,
    /// Histogram bins of the density outputs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub match_range: bool,
    pub bins: usize,
    pub kernel: String,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecorrelationParams(ExperimentParams);

impl Default for DecorrelationParams {
    fn default() -> Self {
        Self(ExperimentParams {
            n: 200,
            m: 10,
            replicates: 2000,
            match_range: true,
            bins: 50,
            kernel: "exponential".into(),
            sigma2: 1.0,
            phi: 6.0,
            tau2: 0.1,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimCompareParams(ExperimentParams);

impl Default for SimCompareParams {
    fn default() -> Self {
        Self(ExperimentParams {
            n: 100,
            m: 5,
            replicates: 10000,
            match_range: true,
            bins: 50,
            kernel: "exponential".into(),
            sigma2: 1.0,
            phi: 6.0,
            tau2: 0.0,
        })
    }
}

impl ExperimentParams {
    fn spec(&self) -> Result<CovarianceSpec> {
        let family = kernel(&self.kernel)?;
        if self.match_range {
            let base = usage(CovarianceSpec::new(
                KernelFamily::Exponential,
                self.sigma2,
                self.phi,
                self.tau2,
            ))?;
            Ok(matched_spec(&base, family))
        } else {
            usage(CovarianceSpec::new(family, self.sigma2, self.phi, self.tau2))
        }
    }

    fn check(&self) -> Result<()> {
        require(self.n >= 2, "n must be at least 2")?;
        require(self.m >= 1, "m must be at least 1")?;
        require(self.bins >= 1, "bins must be at least 1")
    }
}

fn matrix_rows<'a>(mats: &'a [&'a DMatrix<f64>]) -> impl Iterator<Item = Vec<String>> + 'a {
    let n = mats[0].nrows();
    (0..n).flat_map(move |i| {
        (0..n).map(move |j| {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(mats.iter().map(|m| fmt_f64(m[(i, j)])));
            row
        })
    })
}

fn density_rows(kind: &'static str, values: &[f64], bins: usize) -> Vec<Vec<String>> {
    density_histogram(values, bins)
        .into_iter()
        .map(|(c, d)| vec![kind.to_string(), fmt_f64(c), fmt_f64(d)])
        .collect()
}

pub fn run_decorrelation(mut run: Run, flags: &ExperimentFlags) -> Result<()> {
    let DecorrelationParams(p) = run.params(flags)?;
    p.check()?;
    require(p.replicates >= 100, "decorrelate-exp needs at least 100 replicates")?;
    let spec = p.spec()?;
    let res = decorrelation_experiment(&DecorrelationConfig {
        n: p.n,
        m: p.m,
        replicates: p.replicates,
        spec,
        seed: run.seed,
    })?;
    let cov = &res.covariance;
    write_csv(
        &run.out.path("covariance.csv"),
        &["i", "j", "decorrelated", "raw"],
        matrix_rows(&[cov, &res.raw_covariance]),
    )?;
    let n = cov.nrows();
    let diag: Vec<f64> = cov.diagonal().iter().copied().collect();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| cov[(i, j)])
        .collect();
    let mut rows = density_rows("diagonal", &diag, p.bins);
    rows.extend(density_rows("offdiagonal", &off, p.bins));
    write_csv(&run.out.path("densities.csv"), &["kind", "center", "density"], rows)?;
    write_json(
        &run.out.path("summary.json"),
        &json!({
            "kernel": spec.family,
            "phi": spec.phi,
            "mean_diagonal": res.mean_diagonal,
            "mean_abs_offdiagonal": res.mean_abs_offdiagonal,
        }),
    )?;
    run.finish(&p)
}

pub fn run_sim_compare(mut run: Run, flags: &ExperimentFlags) -> Result<()> {
    let SimCompareParams(p) = run.params(flags)?;
    p.check()?;
    require(p.replicates >= 2, "sim-compare needs at least 2 replicates")?;
    let spec = p.spec()?;
    let res = sim_compare(&SimCompareConfig {
        n: p.n,
        m: p.m,
        replicates: p.replicates,
        spec,
        seed: run.seed,
    })?;
    write_csv(
        &run.out.path("covariances.csv"),
        &["i", "j", "exact", "implied", "dense_sample", "nngp_sample"],
        matrix_rows(&[&res.exact, &res.implied, &res.dense_sample, &res.nngp_sample]),
    )?;
    write_csv(
        &run.out.path("differences.csv"),
        &["kind", "center", "density"],
        density_rows("nngp_minus_dense", &res.differences(), p.bins),
    )?;
    write_json(
        &run.out.path("summary.json"),
        &json!({
            "kernel": spec.family,
            "phi": spec.phi,
            "max_standardized_error": res.max_standardized_error,
            "mean_difference": res.mean_difference,
            "mean_exact_difference": res.mean_exact_difference,
        }),
    )?;
    run.finish(&p)
}

#[derive(Debug, Args, Serialize)]
pub struct BenchFlags {
    /// Comma-separated location counts.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Fields simulated per timed run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    /// Timed runs per `n` and method.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Also time dense Cholesky simulation where it fits in memory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchParams {
    pub ns: Vec<usize>,
    pub m: usize,
    pub draws: usize,
    pub replicates: usize,
    pub dense: bool,
    pub kernel: String,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            ns: vec![1000, 2500, 5000],
            m: 10,
            draws: 100,
            replicates: 3,
            dense: true,
            kernel: "exponential".into(),
            sigma2: 1.0,
            phi: 6.0,
            tau2: 0.0,
        }
    }
}

pub fn run_bench(mut run: Run, flags: &BenchFlags) -> Result<()> {
    let p: BenchParams = run.params(flags)?;
    require(!p.ns.is_empty(), "ns must list at least one location count")?;
    require(p.ns.iter().all(|&n| n >= 1), "every n must be at least 1")?;
    require(p.m >= 1, "m must be at least 1")?;
    require(p.draws >= 1, "draws must be at least 1")?;
    require(p.replicates >= 1, "replicates must be at least 1")?;
    let spec = super::spec(&p.kernel, p.sigma2, p.phi, p.tau2)?;
    let rows = bench(&BenchConfig {
        ns: p.ns.clone(),
        m: p.m,
        draws: p.draws,
        replicates: p.replicates,
        spec,
        seed: run.seed,
        dense: p.dense,
    })?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_f64);
    let out = rows.iter().map(|r| {
        vec![
            r.n.to_string(),
            match r.method {
                BenchMethod::Nngp => "nngp".into(),
                BenchMethod::Dense => "dense".into(),
            },
            r.seconds.len().to_string(),
            na(r.mean()),
            na(r.sd()),
        ]
    });
    write_csv(
        &run.out.path("bench.csv"),
        &["n", "method", "runs", "mean_seconds", "sd_seconds"],
        out,
    )?;
    run.finish(&p)
}

#[derive(Debug, Args, Serialize)]
pub struct HomoskedasticityFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomoskedasticityParams {
    pub n: usize,
    pub m: usize,
    pub kernel: String,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Default for HomoskedasticityParams {
    fn default() -> Self {
        Self {
            n: 200,
            m: 5,
            kernel: "exponential".into(),
            sigma2: 1.0,
            phi: 1.0,
            tau2: 0.0,
        }
    }
}

pub fn run_homoskedasticity(mut run: Run, flags: &HomoskedasticityFlags) -> Result<()> {
    let p: HomoskedasticityParams = run.params(flags)?;
    require(p.n >= 1, "n must be at least 1")?;
    require(p.m >= 1, "m must be at least 1")?;
    let spec = super::spec(&p.kernel, p.sigma2, p.phi, p.tau2)?;
    let res = homoskedasticity(&HomoskedasticityConfig {
        n: p.n,
        m: p.m,
        spec,
        seed: run.seed,
    })?;
    let rows = (0..p.n).map(|k| vec![k.to_string(), fmt_f64(res.coordinate[k]), fmt_f64(res.random[k])]);
    write_csv(&run.out.path("variances.csv"), &["index", "coordinate", "random"], rows)?;
    let min = |v: &[f64]| {
        v.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &x)| if x < b.1 { (i, x) } else { b })
    };
    let (ci, cmin) = min(&res.coordinate);
    let (ri, rmin) = min(&res.random);
    write_json(
        &run.out.path("summary.json"),
        &json!({
            "coordinate": { "min": cmin, "argmin": ci },
            "random": { "min": rmin, "argmin": ri },
        }),
    )?;
    run.finish(&p)
}
