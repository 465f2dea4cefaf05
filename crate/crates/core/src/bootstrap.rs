//! Spatial bootstrap: decorrelate residuals with the sparse factor, resample
//! them, re-correlate with the back-solve and refit every replicate.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{check_len, NngpError, Result};
use crate::factor::{build_factor, FactorTarget, SparseCholesky};
use crate::geometry::NeighborGraph;
use crate::inference::{fit_mle_with_options, FitResult, RegressionData};
use crate::optim::SimplexOptions;
use crate::rng;

pub const DEFAULT_REPLICATES: usize = 250;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// One row `(beta..., sigma2, phi, tau2)` per successful replicate, in replicate order.
    pub estimates: Vec<Vec<f64>>,
    /// Percentile interval per parameter at `level`.
    pub intervals: Vec<(f64, f64)>,
    pub level: f64,
    /// Number of replicates requested.
    pub replicates: usize,
    pub seed: u64,
    /// Replicates whose refit errored or hit the iteration cap.
    pub failures: usize,
}

impl BootstrapResult {
    /// Percentile intervals at another coverage level from the same replicates.
    pub fn intervals_at(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        percentile_intervals(&self.estimates, level)
    }

    pub fn n_parameters(&self) -> usize {
        self.intervals.len()
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(NngpError::InvalidParameter(format!(
            "level must lie in (0, 1), got {level}"
        )))
    }
}

/// Column-wise percentile intervals at `(1 - level) / 2` and `(1 + level) / 2`.
pub fn percentile_intervals(rows: &[Vec<f64>], level: f64) -> Result<Vec<(f64, f64)>> {
    check_level(level)?;
    let Some(first) = rows.first() else {
        return Err(NngpError::InsufficientReplicates {
            succeeded: 0,
            failed: 0,
        });
    };
    let q = first.len();
    (0..q)
        .map(|c| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(NngpError::NonFiniteLikelihood);
            }
            col.sort_by(f64::total_cmp);
            Ok((quantile(&col, (1.0 - level) / 2.0), quantile(&col, (1.0 + level) / 2.0)))
        })
        .collect()
}

/// Response-level factor at the fitted covariance.
pub fn fitted_factor(
    data: &RegressionData,
    graph: &Arc<NeighborGraph>,
    spec: &CovarianceSpec,
) -> Result<SparseCholesky> {
    build_factor(&data.locs, graph, spec, FactorTarget::Response)
}

/// `r = L_y (y - X beta)`, indexed by ordered position.
pub fn decorrelate(data: &RegressionData, fit: &FitResult, chol: &SparseCholesky) -> Result<Vec<f64>> {
    check_len(data.len(), chol.len())?;
    let mean = data.mean(&fit.beta)?;
    let resid: Vec<f64> = data.y.iter().zip(&mean).map(|(y, m)| y - m).collect();
    chol.apply(&data.locs.permutation().to_ordered(&resid)?)
}

/// `X beta + L_y^{-1} r` in input order, the inverse of [`decorrelate`].
pub fn recorrelate(data: &RegressionData, fit: &FitResult, chol: &SparseCholesky, r: &[f64]) -> Result<Vec<f64>> {
    let field = data.locs.permutation().to_input(&chol.backsolve(r)?)?;
    let mean = data.mean(&fit.beta)?;
    Ok(mean.iter().zip(&field).map(|(m, w)| m + w).collect())
}

/// One bootstrap response vector from residuals resampled with replacement.
pub fn make_bootstrap_dataset(
    data: &RegressionData,
    fit: &FitResult,
    chol: &SparseCholesky,
    r: &[f64],
    resample_seed: u64,
) -> Result<Vec<f64>> {
    check_len(chol.len(), r.len())?;
    let mut g = rng::seeded(resample_seed);
    let n = r.len();
    let resampled: Vec<f64> = (0..n).map(|_| r[g.random_range(0..n)]).collect();
    recorrelate(data, fit, chol, &resampled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub simplex: SimplexOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            level: DEFAULT_LEVEL,
            seed: 0,
            simplex: SimplexOptions::default(),
        }
    }
}

pub fn run_bootstrap(
    data: &RegressionData,
    graph: &Arc<NeighborGraph>,
    fit: &FitResult,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    run_bootstrap_with(
        data,
        graph,
        fit,
        &BootstrapOptions {
            replicates,
            level,
            seed,
            ..Default::default()
        },
    )
}

pub fn run_bootstrap_with(
    data: &RegressionData,
    graph: &Arc<NeighborGraph>,
    fit: &FitResult,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if opts.replicates < 2 {
        return Err(NngpError::InvalidParameter(
            "at least two bootstrap replicates are needed".into(),
        ));
    }
    check_level(opts.level)?;
    let chol = fitted_factor(data, graph, &fit.spec)?;
    let r = decorrelate(data, fit, &chol)?;
    let family = fit.spec.family;

    let outcomes: Vec<Option<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let y = make_bootstrap_dataset(data, fit, &chol, &r, rng::sub_seed(opts.seed, b as u64)).ok()?;
            let replicate = RegressionData { y, ..data.clone() };
            match fit_mle_with_options(&replicate, graph, &fit.spec, family, &opts.simplex) {
                Ok(refit) if refit.converged => Some(refit.parameter_vector()),
                _ => None,
            }
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let estimates: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    if estimates.len() < 2 {
        return Err(NngpError::InsufficientReplicates {
            succeeded: estimates.len(),
            failed: failures,
        });
    }
    let intervals = percentile_intervals(&estimates, opts.level)?;
    Ok(BootstrapResult {
        estimates,
        intervals,
        level: opts.level,
        replicates: opts.replicates,
        seed: opts.seed,
        failures,
    })
}
