//! Nearest-neighbor likelihood, maximum-likelihood fitting with profiled
//! regression coefficients, and nearest-neighbor kriging.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, KernelFamily};
use crate::error::{check_len, NngpError, Result};
use crate::factor::{build_factor, FactorTarget, SparseCholesky};
use crate::geometry::{LocationSet, NeighborGraph, NeighborIndex, Point};
use crate::optim::{nelder_mead, SimplexOptions};

/// Responses, design matrix and locations, all in input order.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub locs: LocationSet,
}

impl RegressionData {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, locs: LocationSet) -> Result<Self> {
        check_len(locs.len(), y.len())?;
        check_len(locs.len(), x.nrows())?;
        if x.ncols() > y.len() {
            return Err(NngpError::SingularDesign);
        }
        Ok(Self { y, x, locs })
    }

    /// Intercept-only design.
    pub fn with_intercept(y: Vec<f64>, locs: LocationSet) -> Result<Self> {
        let n = y.len();
        Self::new(y, DMatrix::from_element(n, 1, 1.0), locs)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn ordered_y(&self) -> Vec<f64> {
        self.locs.permutation().to_ordered(&self.y).expect("validated length")
    }

    pub fn ordered_x(&self) -> DMatrix<f64> {
        let order = self.locs.permutation().order();
        DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |k, c| self.x[(order[k], c)])
    }

    /// `X beta` in input order.
    pub fn mean(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.x.ncols(), beta.len())?;
        Ok((&self.x * DVector::from_column_slice(beta)).as_slice().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub spec: CovarianceSpec,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// `(beta..., sigma2, phi, tau2)`.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend([self.spec.sigma2, self.spec.phi, self.spec.tau2]);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

fn gaussian_loglik(chol: &SparseCholesky, resid: &[f64]) -> Result<f64> {
    let n = chol.len() as f64;
    let q = chol.quad_form(resid, resid)?;
    Ok(-0.5 * n * (2.0 * PI).ln() - 0.5 * chol.log_det() - 0.5 * q)
}

fn ordered_residuals(y: &[f64], x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let fitted = x * DVector::from_column_slice(beta);
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Log of the nearest-neighbor (Vecchia) density of the response at `beta`.
pub fn vecchia_loglik(
    data: &RegressionData,
    graph: &std::sync::Arc<NeighborGraph>,
    spec: &CovarianceSpec,
    beta: &[f64],
) -> Result<f64> {
    check_len(data.n_covariates(), beta.len())?;
    let chol = build_factor(&data.locs, graph, spec, FactorTarget::Response)?;
    let resid = ordered_residuals(&data.ordered_y(), &data.ordered_x(), beta);
    gaussian_loglik(&chol, &resid)
}

fn gls(y: &[f64], x: &DMatrix<f64>, chol: &SparseCholesky) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    check_len(chol.len(), n)?;
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut xt = DMatrix::zeros(n, p);
    for c in 0..p {
        let col = chol.apply(x.column(c).as_slice())?;
        xt.set_column(c, &DVector::from_vec(col));
    }
    let yt = DVector::from_vec(chol.apply(y)?);
    let qr = xt.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(NngpError::SingularDesign);
    }
    let qty = qr.q().transpose() * yt;
    let beta = r.solve_upper_triangular(&qty).ok_or(NngpError::SingularDesign)?;
    Ok(beta.as_slice().to_vec())
}

/// Generalized least-squares coefficients under the factor's covariance.
pub fn profile_beta(data: &RegressionData, chol: &SparseCholesky) -> Result<Vec<f64>> {
    gls(&data.ordered_y(), &data.ordered_x(), chol)
}

/// Profiled log-likelihood and coefficients for one covariance setting.
fn profiled(
    locs: &LocationSet,
    graph: &std::sync::Arc<NeighborGraph>,
    y: &[f64],
    x: &DMatrix<f64>,
    spec: &CovarianceSpec,
) -> Result<(f64, Vec<f64>)> {
    let chol = build_factor(locs, graph, spec, FactorTarget::Response)?;
    let beta = gls(y, x, &chol)?;
    let resid = ordered_residuals(y, x, &beta);
    Ok((gaussian_loglik(&chol, &resid)?, beta))
}

const LOG_BOUND: f64 = 30.0;
/// Smallest nugget-to-variance ratio explored by the optimizer.
const MIN_NUGGET_RATIO: f64 = 1e-10;

fn spec_from_log(family: KernelFamily, theta: &[f64]) -> CovarianceSpec {
    let c = |v: f64| v.clamp(-LOG_BOUND, LOG_BOUND);
    let sigma2 = c(theta[0]).exp();
    let tau2 = c(theta[2]).max(c(theta[0]) + MIN_NUGGET_RATIO.ln()).exp();
    CovarianceSpec {
        family,
        sigma2,
        phi: c(theta[1]).exp(),
        tau2,
    }
}

/// Maximizes the nearest-neighbor likelihood over `(log sigma2, log phi, log tau2)`
/// with `beta` profiled out by GLS at every evaluation.
pub fn fit_mle(
    data: &RegressionData,
    graph: &std::sync::Arc<NeighborGraph>,
    init: &CovarianceSpec,
    family: KernelFamily,
) -> Result<FitResult> {
    fit_mle_with_options(data, graph, init, family, &SimplexOptions::default())
}

pub fn fit_mle_with_options(
    data: &RegressionData,
    graph: &std::sync::Arc<NeighborGraph>,
    init: &CovarianceSpec,
    family: KernelFamily,
    options: &SimplexOptions,
) -> Result<FitResult> {
    init.validate()?;
    check_len(data.len(), graph.len())?;
    let y = data.ordered_y();
    let x = data.ordered_x();
    let theta0 = [
        init.sigma2.ln(),
        init.phi.ln(),
        init.tau2.max(init.sigma2 * MIN_NUGGET_RATIO).ln(),
    ];
    let start = spec_from_log(family, &theta0);
    let (start_ll, _) = profiled(&data.locs, graph, &y, &x, &start).map_err(|e| match e {
        NngpError::SingularDesign => e,
        _ => NngpError::NonFiniteLikelihood,
    })?;
    if !start_ll.is_finite() {
        return Err(NngpError::NonFiniteLikelihood);
    }

    let objective = |theta: &[f64]| -> f64 {
        let spec = spec_from_log(family, theta);
        match profiled(&data.locs, graph, &y, &x, &spec) {
            Ok((ll, _)) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };
    let res = nelder_mead(objective, &theta0, options);
    let spec = spec_from_log(family, &res.x);
    let (loglik, beta) = profiled(&data.locs, graph, &y, &x, &spec)?;
    Ok(FitResult {
        beta,
        spec,
        loglik,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Simple kriging of zero-mean `values` (ordered positions) at `target`
/// from its `m` nearest indexed sites, using the nugget-inclusive covariance.
pub(crate) fn krige_one(
    index: &NeighborIndex<'_>,
    points: &[Point],
    values: &[f64],
    spec: &CovarianceSpec,
    target: &Point,
    m: usize,
) -> Result<Prediction> {
    let nb = index.nearest(target, m, points.len());
    let k = nb.len();
    let prior = spec.total_variance(true);
    let block = DMatrix::from_fn(k, k, |a, c| spec.between(&points[nb[a]], &points[nb[c]], true));
    let cross = DVector::from_fn(k, |a, _| spec.between(&points[nb[a]], target, true));
    let chol = block
        .cholesky()
        .ok_or(NngpError::SingularNeighborBlock { row: nb[0] })?;
    let weights = chol.solve(&cross);
    let mean = nb.iter().zip(weights.iter()).map(|(&j, w)| w * values[j]).sum();
    let variance = (prior - cross.dot(&weights)).max(0.0);
    Ok(Prediction { mean, variance })
}

/// Response-level nearest-neighbor kriging at new sites.
///
/// `new_x` holds the covariates of the new sites, one row per point. `m` is
/// clipped to the number of observations.
pub fn predict(
    data: &RegressionData,
    fit: &FitResult,
    new_points: &[Point],
    new_x: &DMatrix<f64>,
    m: usize,
) -> Result<Vec<Prediction>> {
    if m == 0 {
        return Err(NngpError::InvalidParameter("m must be at least 1".into()));
    }
    check_len(new_points.len(), new_x.nrows())?;
    check_len(data.n_covariates(), new_x.ncols())?;
    check_len(data.n_covariates(), fit.beta.len())?;
    let m = m.min(data.len());
    let points = data.locs.ordered_points();
    let resid = ordered_residuals(&data.ordered_y(), &data.ordered_x(), &fit.beta);
    let index = NeighborIndex::new(points);
    let trend = new_x * DVector::from_column_slice(&fit.beta);
    new_points
        .par_iter()
        .zip(trend.as_slice().par_iter())
        .map(|(p, mu)| {
            let pred = krige_one(&index, points, &resid, &fit.spec, p, m)?;
            Ok(Prediction {
                mean: mu + pred.mean,
                variance: pred.variance,
            })
        })
        .collect()
}

/// Kriging of zero-mean residuals given in input order.
pub fn krige_residuals(
    locs: &LocationSet,
    residuals: &[f64],
    spec: &CovarianceSpec,
    new_points: &[Point],
    m: usize,
) -> Result<Vec<Prediction>> {
    if m == 0 {
        return Err(NngpError::InvalidParameter("m must be at least 1".into()));
    }
    let values = locs.permutation().to_ordered(residuals)?;
    let points = locs.ordered_points();
    let index = NeighborIndex::new(points);
    let m = m.min(points.len());
    new_points
        .par_iter()
        .map(|p| krige_one(&index, points, &values, spec, p, m))
        .collect()
}
