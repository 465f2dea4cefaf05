//! Desk-scale experiment drivers shared by the command-line tool and the
//! acceptance tests: decorrelation of dense-GP data, NNGP versus dense
//! simulation, simulation timing, and NNGP marginal variances by order index.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, KernelFamily};
use crate::dense::{ensure_dense_feasible, sample_covariance_columns, DenseGp};
use crate::error::{NngpError, Result};
use crate::factor::{build_factor, FactorTarget};
use crate::geometry::{build_neighbor_graph, order_locations, OrderingStrategy, Point};
use crate::rng;

/// `n` locations drawn uniformly on the unit square.
pub fn uniform_points(n: usize, seed: u64) -> Vec<Point> {
    let mut g = rng::seeded(seed);
    (0..n).map(|_| Point::new(g.random(), g.random())).collect()
}

/// Same variance and nugget as `base`, with `phi` rescaled so that `family`
/// reaches correlation 0.05 at the same distance as `base`.
pub fn matched_spec(base: &CovarianceSpec, family: KernelFamily) -> CovarianceSpec {
    CovarianceSpec {
        family,
        phi: base.phi * family.effective_range_factor() / base.family.effective_range_factor(),
        ..*base
    }
}

fn require_replicates(r: usize, min: usize) -> Result<()> {
    if r < min {
        Err(NngpError::InvalidParameter(format!(
            "at least {min} replicates are needed, got {r}"
        )))
    } else {
        Ok(())
    }
}

/// Standard normal draws as an `n x r` matrix; column `k` is `draw_normals(seed, k, n)`.
fn normal_columns(seed: u64, n: usize, r: usize) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|k| rng::draw_normals(seed, k as u64, n))
        .collect();
    DMatrix::from_fn(n, r, |i, k| cols[k][i])
}

fn mean_diag_and_offdiag(cov: &DMatrix<f64>) -> (f64, f64) {
    let n = cov.nrows();
    let diag = cov.diagonal().mean();
    if n < 2 {
        return (diag, 0.0);
    }
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += cov[(i, j)].abs();
            }
        }
    }
    (diag, off / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationConfig {
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub spec: CovarianceSpec,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DecorrelationResult {
    /// Sample covariance of the raw replicates.
    pub raw_covariance: DMatrix<f64>,
    /// Sample covariance of the decorrelated replicates.
    pub covariance: DMatrix<f64>,
    pub mean_diagonal: f64,
    pub mean_abs_offdiagonal: f64,
}

/// Simulates replicates from the dense response covariance and decorrelates
/// each with the nearest-neighbor factor.
pub fn decorrelation_experiment(cfg: &DecorrelationConfig) -> Result<DecorrelationResult> {
    require_replicates(cfg.replicates, 2)?;
    ensure_dense_feasible(cfg.n)?;
    cfg.spec.validate()?;
    let locs = order_locations(&uniform_points(cfg.n, cfg.seed), OrderingStrategy::CoordinateSort)?;
    let graph = build_neighbor_graph(&locs, cfg.m)?;
    let chol = build_factor(&locs, &graph, &cfg.spec, FactorTarget::Response)?;
    let gp = DenseGp::new(locs.ordered_points(), &cfg.spec, true)?;
    let data = gp.correlate_columns(&normal_columns(rng::sub_seed(cfg.seed, 1), cfg.n, cfg.replicates));
    let decorrelated: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|k| chol.apply(data.column(k).as_slice()))
        .collect::<Result<_>>()?;
    let decor = DMatrix::from_fn(cfg.n, cfg.replicates, |i, k| decorrelated[k][i]);
    let covariance = sample_covariance_columns(decor);
    let (mean_diagonal, mean_abs_offdiagonal) = mean_diag_and_offdiag(&covariance);
    Ok(DecorrelationResult {
        raw_covariance: sample_covariance_columns(data),
        covariance,
        mean_diagonal,
        mean_abs_offdiagonal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCompareConfig {
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub spec: CovarianceSpec,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimCompareResult {
    /// Exact covariance `C` of the latent process.
    pub exact: DMatrix<f64>,
    /// Covariance `C~` implied by the nearest-neighbor factor.
    pub implied: DMatrix<f64>,
    pub dense_sample: DMatrix<f64>,
    pub nngp_sample: DMatrix<f64>,
    /// Largest `|nngp_sample - implied|` in units of its Monte Carlo standard error.
    pub max_standardized_error: f64,
    /// Mean of `nngp_sample - dense_sample` over all entries.
    pub mean_difference: f64,
    /// Mean of `implied - exact` over all entries.
    pub mean_exact_difference: f64,
}

impl SimCompareResult {
    /// Upper-triangle entries of `nngp_sample - dense_sample`.
    pub fn differences(&self) -> Vec<f64> {
        let n = self.exact.nrows();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.nngp_sample[(i, j)] - self.dense_sample[(i, j)]);
            }
        }
        out
    }
}

/// Draws latent fields from the dense GP and from the nearest-neighbor
/// factor. Both use the same standard normal vectors, so the entrywise
/// differences reflect the covariance approximation rather than independent
/// sampling noise.
pub fn sim_compare(cfg: &SimCompareConfig) -> Result<SimCompareResult> {
    require_replicates(cfg.replicates, 2)?;
    ensure_dense_feasible(cfg.n)?;
    cfg.spec.validate()?;
    let locs = order_locations(&uniform_points(cfg.n, cfg.seed), OrderingStrategy::CoordinateSort)?;
    let graph = build_neighbor_graph(&locs, cfg.m)?;
    let chol = build_factor(&locs, &graph, &cfg.spec, FactorTarget::Latent)?;
    let gp = DenseGp::new(locs.ordered_points(), &cfg.spec, false)?;
    let z = normal_columns(rng::sub_seed(cfg.seed, 1), cfg.n, cfg.replicates);
    let dense_draws = gp.correlate_columns(&z);
    let nngp: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|k| chol.backsolve(z.column(k).as_slice()))
        .collect::<Result<_>>()?;
    let nngp_draws = DMatrix::from_fn(cfg.n, cfg.replicates, |i, k| nngp[k][i]);
    let dense_sample = sample_covariance_columns(dense_draws);
    let nngp_sample = sample_covariance_columns(nngp_draws);
    let implied = chol.implied_covariance();
    let exact = crate::covariance::cross_covariance(&cfg.spec, locs.ordered_points(), locs.ordered_points(), false);

    let r = cfg.replicates as f64;
    let mut max_standardized_error = 0.0f64;
    for i in 0..cfg.n {
        for j in 0..cfg.n {
            let se = ((implied[(i, i)] * implied[(j, j)] + implied[(i, j)].powi(2)) / r).sqrt();
            max_standardized_error = max_standardized_error.max((nngp_sample[(i, j)] - implied[(i, j)]).abs() / se);
        }
    }
    let entries = (cfg.n * cfg.n) as f64;
    Ok(SimCompareResult {
        mean_difference: (&nngp_sample - &dense_sample).sum() / entries,
        mean_exact_difference: (&implied - &exact).sum() / entries,
        exact,
        implied,
        dense_sample,
        nngp_sample,
        max_standardized_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Nngp,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub method: BenchMethod,
    /// Wall-clock seconds per replicate run; empty when the method is infeasible.
    pub seconds: Vec<f64>,
}

impl BenchRow {
    pub fn is_na(&self) -> bool {
        self.seconds.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.is_na()).then(|| self.seconds.iter().sum::<f64>() / self.seconds.len() as f64)
    }

    pub fn sd(&self) -> Option<f64> {
        let mean = self.mean()?;
        let k = self.seconds.len();
        if k < 2 {
            return Some(0.0);
        }
        Some((self.seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub m: usize,
    pub draws: usize,
    pub replicates: usize,
    pub spec: CovarianceSpec,
    pub seed: u64,
    /// Time the dense Cholesky baseline where it fits in memory.
    pub dense: bool,
}

/// Neighbor search, factor construction and `draws` simulations.
fn time_nngp(points: &[Point], cfg: &BenchConfig, seed: u64) -> Result<f64> {
    let start = Instant::now();
    let locs = order_locations(points, OrderingStrategy::CoordinateSort)?;
    let graph = build_neighbor_graph(&locs, cfg.m)?;
    let chol = build_factor(&locs, &graph, &cfg.spec, FactorTarget::Latent)?;
    let draws = chol.simulate(seed, cfg.draws);
    std::hint::black_box(&draws);
    Ok(start.elapsed().as_secs_f64())
}

/// Covariance assembly, dense Cholesky and `draws` simulations.
fn time_dense(points: &[Point], cfg: &BenchConfig, seed: u64) -> Result<f64> {
    let start = Instant::now();
    let gp = DenseGp::new(points, &cfg.spec, false)?;
    let draws = gp.correlate_columns(&normal_columns(seed, points.len(), cfg.draws));
    std::hint::black_box(&draws);
    Ok(start.elapsed().as_secs_f64())
}

/// Times simulation at every `n`; replicate runs are sequential so they do
/// not compete for cores.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    require_replicates(cfg.replicates, 1)?;
    cfg.spec.validate()?;
    let mut rows = Vec::new();
    for (idx, &n) in cfg.ns.iter().enumerate() {
        let points = uniform_points(n, rng::sub_seed(cfg.seed, idx as u64));
        let seeds: Vec<u64> = (0..cfg.replicates as u64)
            .map(|k| rng::sub_seed(cfg.seed ^ n as u64, k))
            .collect();
        let nngp = seeds
            .iter()
            .map(|&s| time_nngp(&points, cfg, s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(BenchRow {
            n,
            method: BenchMethod::Nngp,
            seconds: nngp,
        });
        if cfg.dense {
            let seconds = if ensure_dense_feasible(n).is_ok() {
                seeds
                    .iter()
                    .map(|&s| time_dense(&points, cfg, s))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            rows.push(BenchRow {
                n,
                method: BenchMethod::Dense,
                seconds,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoskedasticityConfig {
    pub n: usize,
    pub m: usize,
    pub spec: CovarianceSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomoskedasticityResult {
    /// Marginal variance of the latent NNGP by order index, coordinate ordering.
    pub coordinate: Vec<f64>,
    /// The same for a random ordering of the same points.
    pub random: Vec<f64>,
}

pub fn homoskedasticity(cfg: &HomoskedasticityConfig) -> Result<HomoskedasticityResult> {
    cfg.spec.validate()?;
    let points = uniform_points(cfg.n, cfg.seed);
    let variances = |strategy| -> Result<Vec<f64>> {
        let locs = order_locations(&points, strategy)?;
        let graph = build_neighbor_graph(&locs, cfg.m)?;
        Ok(build_factor(&locs, &graph, &cfg.spec, FactorTarget::Latent)?.implied_variances())
    };
    Ok(HomoskedasticityResult {
        coordinate: variances(OrderingStrategy::CoordinateSort)?,
        random: variances(OrderingStrategy::Random(rng::sub_seed(cfg.seed, 1)))?,
    })
}

/// Equal-width histogram as `(bin center, density)` pairs.
pub fn density_histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| (lo + (b as f64 + 0.5) * width, c as f64 / (total * width)))
        .collect()
}
