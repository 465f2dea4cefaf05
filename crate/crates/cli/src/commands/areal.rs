//! CAR and DAGAR diagnostics on an areal adjacency graph.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use nngp::dagar::{
    car_diagnostics, dagar_diagnostics, dagar_loglik, ArealGraph, ArealModel, ArealOrdering, DagarSpec, DiagnosticRow,
    SymmetryClasses,
};
use nngp::rng::sub_seed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{require, usage, Run};
use crate::io::{fmt_f64, write_csv, write_json};
use crate::UsageError;

#[derive(Debug, Args, Serialize)]
pub struct DagarFlags {
    /// Edge list, one whitespace-separated `i j` pair per line, 0-indexed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    /// Number of regions when some have no edges; defaults to the largest label plus one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regions: Option<usize>,
    /// Rook lattice `RxC` instead of an edge list, e.g. `3x3`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Comma-separated values of rho.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Processing order for DAGAR: input, degree or random.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<String>,
    /// One value per region, by label; adds the DAGAR log-likelihood at every rho.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagarParams {
    pub edges: Option<PathBuf>,
    pub regions: Option<usize>,
    pub grid: Option<String>,
    pub rho: Vec<f64>,
    pub sigma2: f64,
    pub ordering: String,
    pub values: Option<PathBuf>,
}

impl Default for DagarParams {
    fn default() -> Self {
        Self {
            edges: None,
            regions: None,
            grid: None,
            rho: vec![0.1, 0.25, 0.5, 0.75, 0.9, 0.99],
            sigma2: 1.0,
            ordering: "input".into(),
            values: None,
        }
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || UsageError(format!("grid must look like RxC, got '{s}'"));
    let (r, c) = s
        .to_ascii_lowercase()
        .split_once('x')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    require(r >= 1 && c >= 1, "grid dimensions must be at least 1")?;
    Ok((r, c))
}

/// Tags an edge-list graph that is a row-major lattice so it gets grid classes.
fn detect_grid(graph: ArealGraph) -> ArealGraph {
    let n = graph.len();
    for rows in 2..n {
        if n % rows == 0 && n / rows >= 2 {
            if let Ok(g) = graph.clone().with_grid_shape(rows, n / rows) {
                return g;
            }
        }
    }
    graph
}

fn read_values(path: &PathBuf) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| anyhow::anyhow!("{}: line {}: cannot parse '{line}'", path.display(), k + 1))?;
        out.push(v);
    }
    Ok(out)
}

fn tidy(rows: &[DiagnosticRow]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for r in rows {
        let model = match r.model {
            ArealModel::Car => "car",
            ArealModel::Dagar => "dagar",
        };
        let mut push = |kind: &str, group: String, v: f64| {
            out.push(vec![
                model.to_string(),
                fmt_f64(r.rho),
                r.singular.to_string(),
                kind.to_string(),
                group,
                if v.is_nan() { "NA".into() } else { fmt_f64(v) },
            ]);
        };
        for (g, &v) in r.group_variances.iter().enumerate() {
            push("variance", g.to_string(), v);
        }
        for (g, &v) in r.edge_correlations.iter().enumerate() {
            push("correlation", g.to_string(), v);
        }
        push("variance_ratio", "all".into(), r.variance_ratio);
    }
    out
}

pub fn run(mut run: Run, flags: &DagarFlags) -> Result<()> {
    let p: DagarParams = run.params(flags)?;
    require(!p.rho.is_empty(), "rho must list at least one value")?;
    require(
        p.rho.iter().all(|r| r.is_finite() && *r >= 0.0),
        "rho values must be finite and nonnegative",
    )?;
    require(p.sigma2.is_finite() && p.sigma2 > 0.0, "sigma2 must be > 0")?;
    let graph = match (&p.edges, &p.grid) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let g = usage(ArealGraph::parse_edge_list(&text, p.regions)).with_context(|| path.display().to_string())?;
            detect_grid(g)
        }
        (None, Some(shape)) => {
            let (r, c) = parse_shape(shape)?;
            usage(ArealGraph::grid(r, c))?
        }
        _ => return Err(UsageError("give exactly one of --edges or --grid".into()).into()),
    };
    let order = match p.ordering.to_ascii_lowercase().as_str() {
        "input" => ArealOrdering::Input,
        "degree" => ArealOrdering::Degree,
        "random" => ArealOrdering::Random(sub_seed(run.seed, 1)),
        other => {
            return Err(UsageError(format!("unknown ordering '{other}' (expected input, degree or random)")).into())
        }
    };
    let graph = graph.ordered(order)?;
    let classes = SymmetryClasses::for_graph(&graph);

    // DAGAR is defined for rho < 1 only; CAR reports larger values as singular.
    let dagar_rho: Vec<f64> = p.rho.iter().copied().filter(|&r| r < 1.0).collect();
    let mut rows = car_diagnostics(&graph, &classes, &p.rho, p.sigma2)?;
    rows.extend(dagar_diagnostics(&graph, &classes, &dagar_rho, p.sigma2)?);
    write_csv(
        &run.out.path("diagnostics.csv"),
        &["model", "rho", "singular", "kind", "group", "value"],
        tidy(&rows),
    )?;

    let mut group_rows: Vec<Vec<String>> = classes
        .vertex_group
        .iter()
        .enumerate()
        .map(|(v, g)| vec!["vertex".into(), v.to_string(), String::new(), g.to_string()])
        .collect();
    group_rows.extend(
        classes
            .edges
            .iter()
            .zip(&classes.edge_group)
            .map(|(&(a, b), g)| vec!["edge".into(), a.to_string(), b.to_string(), g.to_string()]),
    );
    write_csv(&run.out.path("groups.csv"), &["kind", "i", "j", "group"], group_rows)?;

    let loglik = match &p.values {
        Some(path) => {
            let w = read_values(path)?;
            require(
                w.len() == graph.len(),
                format!("{}: expected {} values, found {}", path.display(), graph.len(), w.len()),
            )?;
            let ll = dagar_rho
                .iter()
                .map(|&rho| {
                    Ok(json!({ "rho": rho, "loglik": dagar_loglik(&graph, &DagarSpec::new(rho, p.sigma2)?, &w)? }))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(ll)
        }
        None => None,
    };
    write_json(
        &run.out.path("summary.json"),
        &json!({
            "regions": graph.len(),
            "edges": graph.edge_count(),
            "grid_shape": graph.grid_shape(),
            "vertex_groups": classes.n_vertex_groups(),
            "edge_groups": classes.n_edge_groups(),
            "diagnostics": rows,
            "dagar_loglik": loglik,
        }),
    )?;
    run.finish(&p)
}
