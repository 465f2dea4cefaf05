//! Drivers over geostatistical data files: likelihood fits, the spatial
//! bootstrap and GLS random forests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::{DMatrix, DVector};
use nngp::bootstrap::run_bootstrap;
use nngp::rfgls::{fit_forest, predict_forest, working_covariance, ForestHyper, ForestPrediction, KrigingContext};
use nngp::rng::sub_seed;
use nngp::{
    build_factor, build_neighbor_graph, fit_mle, order_locations, predict, CovarianceSpec, FactorTarget, FitResult,
    NeighborGraph, RegressionData, SparseCholesky,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{kernel, ordering, require, usage, Run};
use crate::io::{fmt_f64, read_table, write_csv, write_json, GeoTable};
use crate::UsageError;

/// Input and covariance-model flags shared by `fit`, `bootstrap` and `rfgls`.
#[derive(Debug, Args, Serialize)]
pub struct DataFlags {
    /// CSV with columns `sx, sy, y, x1..xp`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Neighbors per location.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// coordinate or random.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<String>,
    /// Covariance family: exponential, matern32 or gaussian.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Starting partial sill; defaults to 80% of the OLS residual variance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_sigma2: Option<f64>,
    /// Starting decay; defaults to an effective range of a quarter of the
    /// bounding-box diagonal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_phi: Option<f64>,
    /// Starting nugget; defaults to 20% of the OLS residual variance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_tau2: Option<f64>,
}

struct Prepared {
    table: GeoTable,
    data: RegressionData,
    graph: Arc<NeighborGraph>,
    names: Vec<String>,
}

fn prepare(path: Option<&Path>, order: &str, m: usize, intercept: bool, seed: u64) -> Result<Prepared> {
    let path = path.ok_or_else(|| UsageError("--data is required".into()))?;
    require(m >= 1, "m must be at least 1")?;
    let table = read_table(path, true)?;
    let strategy = ordering(order, sub_seed(seed, 1))?;
    let locs = order_locations(&table.points, strategy).with_context(|| format!("locations in {}", path.display()))?;
    let graph = build_neighbor_graph(&locs, m)?;
    let y = table.y.clone().expect("required above");
    let (x, names) = design(&table, intercept);
    let data = RegressionData::new(y, x, locs)?;
    Ok(Prepared {
        table,
        data,
        graph,
        names,
    })
}

fn design(table: &GeoTable, intercept: bool) -> (DMatrix<f64>, Vec<String>) {
    let n = table.len();
    if !intercept {
        return (table.x.clone(), table.covariate_names.clone());
    }
    let p = table.x.ncols();
    let x = DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { table.x[(i, c - 1)] });
    let mut names = vec!["intercept".to_string()];
    names.extend(table.covariate_names.iter().cloned());
    (x, names)
}

/// Starting values from an ordinary least squares fit and the spatial extent.
fn initial_spec(
    family: &str,
    data: &RegressionData,
    sigma2: Option<f64>,
    phi: Option<f64>,
    tau2: Option<f64>,
) -> Result<CovarianceSpec> {
    let family = kernel(family)?;
    let y = DVector::from_column_slice(&data.y);
    let resid = if data.n_covariates() == 0 {
        y.clone()
    } else {
        let svd = data.x.clone().svd(true, true);
        let beta = svd
            .solve(&y, 1e-12)
            .map_err(|e| anyhow::anyhow!("least squares start: {e}"))?;
        &y - &data.x * beta
    };
    let var = (resid.norm_squared() / data.len() as f64).max(1e-8);
    let pts = data.locs.coords();
    let span = |f: fn(&nngp::Point) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let diag = span(|p| p.x).hypot(span(|p| p.y));
    let range = if diag > 0.0 { 0.25 * diag } else { 1.0 };
    usage(CovarianceSpec::new(
        family,
        sigma2.unwrap_or(0.8 * var),
        phi.unwrap_or(family.effective_range_factor() / range),
        tau2.unwrap_or(0.2 * var),
    ))
}

fn named(names: &[String], values: &[f64]) -> Value {
    Value::Object(
        names
            .iter()
            .cloned()
            .zip(values.iter().map(|&v| json!(v)))
            .collect::<Map<_, _>>(),
    )
}

fn fit_json(fit: &FitResult, names: &[String]) -> Value {
    json!({
        "kernel": fit.spec.family,
        "beta": named(names, &fit.beta),
        "sigma2": fit.spec.sigma2,
        "phi": fit.spec.phi,
        "tau2": fit.spec.tau2,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
    })
}

/// Prediction sites must carry the training covariates, in order.
fn read_sites(path: &Path, training: &GeoTable) -> Result<GeoTable> {
    let sites = read_table(path, false)?;
    require(
        sites.covariate_names == training.covariate_names,
        format!(
            "{}: covariate columns [{}] do not match the training columns [{}]",
            path.display(),
            sites.covariate_names.join(", "),
            training.covariate_names.join(", ")
        ),
    )?;
    Ok(sites)
}

#[derive(Debug, Args, Serialize)]
pub struct FitFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataFlags,
    /// Include an intercept column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    /// CSV of prediction sites with columns `sx, sy, x1..xp`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict: Option<PathBuf>,
    /// Neighbors used for kriging; defaults to `m`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict_m: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    pub data: Option<PathBuf>,
    pub m: usize,
    pub ordering: String,
    pub kernel: String,
    pub init_sigma2: Option<f64>,
    pub init_phi: Option<f64>,
    pub init_tau2: Option<f64>,
    pub intercept: bool,
    pub predict: Option<PathBuf>,
    pub predict_m: Option<usize>,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            data: None,
            m: 15,
            ordering: "coordinate".into(),
            kernel: "exponential".into(),
            init_sigma2: None,
            init_phi: None,
            init_tau2: None,
            intercept: true,
            predict: None,
            predict_m: None,
        }
    }
}

pub fn run_fit(mut run: Run, flags: &FitFlags) -> Result<()> {
    let p: FitParams = run.params(flags)?;
    require(p.predict_m != Some(0), "predict_m must be at least 1")?;
    let prep = prepare(p.data.as_deref(), &p.ordering, p.m, p.intercept, run.seed)?;
    let init = initial_spec(&p.kernel, &prep.data, p.init_sigma2, p.init_phi, p.init_tau2)?;
    let fit = fit_mle(&prep.data, &prep.graph, &init, init.family)?;
    let mut summary = fit_json(&fit, &prep.names);
    summary["n"] = json!(prep.data.len());
    summary["m"] = json!(p.m);
    summary["init"] = json!(init);
    write_json(&run.out.path("fit.json"), &summary)?;

    if let Some(path) = &p.predict {
        let sites = read_sites(path, &prep.table)?;
        let (new_x, _) = design(&sites, p.intercept);
        let preds = predict(&prep.data, &fit, &sites.points, &new_x, p.predict_m.unwrap_or(p.m))?;
        let rows = sites
            .points
            .iter()
            .zip(&preds)
            .map(|(s, pr)| vec![fmt_f64(s.x), fmt_f64(s.y), fmt_f64(pr.mean), fmt_f64(pr.variance)]);
        write_csv(
            &run.out.path("predictions.csv"),
            &["sx", "sy", "mean", "variance"],
            rows,
        )?;
    }
    run.finish(&p)
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    /// Bootstrap datasets to refit.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Coverage of the percentile intervals.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapParams {
    pub data: Option<PathBuf>,
    pub m: usize,
    pub ordering: String,
    pub kernel: String,
    pub init_sigma2: Option<f64>,
    pub init_phi: Option<f64>,
    pub init_tau2: Option<f64>,
    pub intercept: bool,
    pub replicates: usize,
    pub level: f64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            data: None,
            m: 15,
            ordering: "coordinate".into(),
            kernel: "exponential".into(),
            init_sigma2: None,
            init_phi: None,
            init_tau2: None,
            intercept: true,
            replicates: nngp::bootstrap::DEFAULT_REPLICATES,
            level: nngp::bootstrap::DEFAULT_LEVEL,
        }
    }
}

pub fn run_bootstrap_cmd(mut run: Run, flags: &BootstrapFlags) -> Result<()> {
    let p: BootstrapParams = run.params(flags)?;
    require(p.replicates >= 2, "replicates must be at least 2")?;
    require(p.level > 0.0 && p.level < 1.0, "level must lie in (0, 1)")?;
    let prep = prepare(p.data.as_deref(), &p.ordering, p.m, p.intercept, run.seed)?;
    let init = initial_spec(&p.kernel, &prep.data, p.init_sigma2, p.init_phi, p.init_tau2)?;
    let fit = fit_mle(&prep.data, &prep.graph, &init, init.family)?;
    let boot = run_bootstrap(
        &prep.data,
        &prep.graph,
        &fit,
        p.replicates,
        p.level,
        sub_seed(run.seed, 2),
    )?;

    let mut names: Vec<String> = prep.names.iter().map(|n| format!("beta_{n}")).collect();
    names.extend(["sigma2", "phi", "tau2"].map(String::from));
    let estimate = fit.parameter_vector();
    let intervals: Vec<Value> = names
        .iter()
        .zip(&estimate)
        .zip(&boot.intervals)
        .map(|((name, est), (lo, hi))| json!({ "parameter": name, "estimate": est, "lower": lo, "upper": hi }))
        .collect();
    write_json(
        &run.out.path("bootstrap.json"),
        &json!({
            "fit": fit_json(&fit, &prep.names),
            "level": boot.level,
            "replicates": boot.replicates,
            "failures": boot.failures,
            "intervals": intervals,
        }),
    )?;
    let rows = boot.estimates.iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect());
    write_csv(&run.out.path("replicates.csv"), &names, rows)?;
    run.finish(&p)
}

#[derive(Debug, Args, Serialize)]
pub struct RfglsFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_node_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_leaves: Option<usize>,
    /// Features tried per split; defaults to a third of the features.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    /// Resample rows of the decorrelated system for every tree.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample: Option<bool>,
    /// Ignore spatial correlation: identity decorrelation, classic forest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive: Option<bool>,
    /// CSV of prediction sites with columns `sx, sy, x1..xp`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict: Option<PathBuf>,
    /// Add kriged training residuals to the forest mean at prediction sites.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kriging: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfglsParams {
    pub data: Option<PathBuf>,
    pub m: usize,
    pub ordering: String,
    pub kernel: String,
    pub init_sigma2: Option<f64>,
    pub init_phi: Option<f64>,
    pub init_tau2: Option<f64>,
    pub n_trees: usize,
    pub min_node_size: usize,
    pub max_leaves: Option<usize>,
    pub mtry: Option<usize>,
    pub resample: bool,
    pub naive: bool,
    pub predict: Option<PathBuf>,
    pub kriging: bool,
}

impl Default for RfglsParams {
    fn default() -> Self {
        let h = ForestHyper::default();
        Self {
            data: None,
            m: 15,
            ordering: "coordinate".into(),
            kernel: "exponential".into(),
            init_sigma2: None,
            init_phi: None,
            init_tau2: None,
            n_trees: h.n_trees,
            min_node_size: h.min_node_size,
            max_leaves: h.max_leaves,
            mtry: h.mtry,
            resample: h.resample,
            naive: false,
            predict: None,
            kriging: true,
        }
    }
}

pub fn run_rfgls(mut run: Run, flags: &RfglsFlags) -> Result<()> {
    let p: RfglsParams = run.params(flags)?;
    let hyper = ForestHyper {
        n_trees: p.n_trees,
        min_node_size: p.min_node_size,
        max_leaves: p.max_leaves,
        mtry: p.mtry,
        resample: p.resample,
    };
    usage(hyper.validate())?;
    let prep = prepare(p.data.as_deref(), &p.ordering, p.m, false, run.seed)?;
    require(
        prep.data.n_covariates() >= 1,
        "rfgls needs at least one covariate column",
    )?;
    let n = prep.data.len();

    let working = if p.naive {
        None
    } else {
        let init = initial_spec(&p.kernel, &prep.data, p.init_sigma2, p.init_phi, p.init_tau2)?;
        Some(working_covariance(&prep.data, &prep.graph, &init, init.family)?)
    };
    let chol = match &working {
        Some(w) => build_factor(&prep.data.locs, &prep.graph, &w.spec, FactorTarget::Response)?,
        None => SparseCholesky::identity(n),
    };
    let model = fit_forest(&prep.data, &chol, &hyper, sub_seed(run.seed, 2))?;

    let leaves: Vec<usize> = model.trees.iter().map(|t| t.n_leaves()).collect();
    let depths: Vec<usize> = model.trees.iter().map(|t| t.depth()).collect();
    let working_json = working.as_ref().map(|w| {
        let mut names = vec!["intercept".to_string()];
        names.extend(prep.table.covariate_names.iter().cloned());
        if w.beta.len() == 1 {
            names.truncate(1);
        }
        fit_json(w, &names)
    });
    write_json(
        &run.out.path("forest.json"),
        &json!({
            "n": n,
            "features": prep.table.covariate_names,
            "hyper": hyper,
            "effective_mtry": hyper.effective_mtry(model.n_features),
            "working_covariance": working_json,
            "mean_leaves": leaves.iter().sum::<usize>() as f64 / leaves.len() as f64,
            "max_depth": depths.iter().max(),
        }),
    )?;
    write_json(&run.out.path("trees.json"), &model.trees)?;

    let fitted = predict_forest(&model, &prep.data.x, ForestPrediction::MeanOnly)?;
    let rows = (0..n).map(|i| {
        let s = prep.table.points[i];
        vec![fmt_f64(s.x), fmt_f64(s.y), fmt_f64(prep.data.y[i]), fmt_f64(fitted[i])]
    });
    write_csv(&run.out.path("fitted.csv"), &["sx", "sy", "y", "fitted"], rows)?;

    if let Some(path) = &p.predict {
        let sites = read_sites(path, &prep.table)?;
        let mode = match (&working, p.kriging) {
            (Some(w), true) => ForestPrediction::MeanPlusKriging(KrigingContext {
                train: &prep.data,
                spec: &w.spec,
                new_points: &sites.points,
                m: p.m,
            }),
            _ => ForestPrediction::MeanOnly,
        };
        let preds = predict_forest(&model, &sites.x, mode)?;
        let rows = sites
            .points
            .iter()
            .zip(&preds)
            .map(|(s, v)| vec![fmt_f64(s.x), fmt_f64(s.y), fmt_f64(*v)]);
        write_csv(&run.out.path("predictions.csv"), &["sx", "sy", "mean"], rows)?;
    }
    run.finish(&p)
}
