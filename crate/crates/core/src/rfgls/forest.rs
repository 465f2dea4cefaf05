use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::tree::{TreeContext, TreeNode};
use super::ForestHyper;
use crate::covariance::{CovarianceSpec, KernelFamily};
use crate::error::{check_len, NngpError, Result};
use crate::factor::SparseCholesky;
use crate::geometry::{NeighborGraph, Point};
use crate::inference::{fit_mle, krige_residuals, FitResult, RegressionData};
use crate::rng;

#[derive(Debug, Clone)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub chol: SparseCholesky,
    pub resample_seeds: Vec<u64>,
    pub hyper: ForestHyper,
    pub n_features: usize,
}

/// What [`predict_forest`] returns.
#[derive(Debug, Clone, Copy)]
pub enum ForestPrediction<'a> {
    /// Average of the tree outputs.
    MeanOnly,
    /// Tree average plus nearest-neighbor kriging of the training residuals.
    MeanPlusKriging(KrigingContext<'a>),
}

#[derive(Debug, Clone, Copy)]
pub struct KrigingContext<'a> {
    /// The data the forest was trained on.
    pub train: &'a RegressionData,
    pub spec: &'a CovarianceSpec,
    /// Locations of the prediction rows.
    pub new_points: &'a [Point],
    pub m: usize,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Forest mean at one feature row.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Grows `hyper.n_trees` trees in parallel. Tree `t` draws its resampling and
/// feature subsets from `sub_seed(seed, t)`.
pub fn fit_forest(data: &RegressionData, chol: &SparseCholesky, hyper: &ForestHyper, seed: u64) -> Result<ForestModel> {
    let ctx = TreeContext::new(data, chol, *hyper)?;
    let resample_seeds: Vec<u64> = (0..hyper.n_trees as u64).map(|t| rng::sub_seed(seed, t)).collect();
    let trees = resample_seeds
        .par_iter()
        .map(|&s| {
            let mut g = rng::seeded(s);
            let w = ctx.resample_weights(&mut g);
            ctx.grow(&w, &mut g)
        })
        .collect();
    Ok(ForestModel {
        trees,
        chol: chol.clone(),
        resample_seeds,
        hyper: *hyper,
        n_features: data.n_covariates(),
    })
}

fn forest_mean(model: &ForestModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_len(model.n_features, x.ncols())?;
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|r| {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            model.predict_row(&row)
        })
        .collect())
}

pub fn predict_forest(model: &ForestModel, x_new: &DMatrix<f64>, mode: ForestPrediction<'_>) -> Result<Vec<f64>> {
    let mean = forest_mean(model, x_new)?;
    match mode {
        ForestPrediction::MeanOnly => Ok(mean),
        ForestPrediction::MeanPlusKriging(ctx) => {
            check_len(x_new.nrows(), ctx.new_points.len())?;
            let fitted = forest_mean(model, &ctx.train.x)?;
            let resid: Vec<f64> = ctx.train.y.iter().zip(&fitted).map(|(y, h)| y - h).collect();
            let krig = krige_residuals(&ctx.train.locs, &resid, ctx.spec, ctx.new_points, ctx.m)?;
            Ok(mean.iter().zip(&krig).map(|(h, k)| h + k.mean).collect())
        }
    }
}

/// Covariance for the decorrelating factor, from a linear-model fit of `y`
/// on an intercept and the forest features.
pub fn working_covariance(
    data: &RegressionData,
    graph: &Arc<NeighborGraph>,
    init: &CovarianceSpec,
    family: KernelFamily,
) -> Result<FitResult> {
    let n = data.len();
    let p = data.n_covariates();
    let design = DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { data.x[(i, c - 1)] });
    let linear = RegressionData {
        x: design,
        ..data.clone()
    };
    match fit_mle(&linear, graph, init, family) {
        Err(NngpError::SingularDesign) => fit_mle(
            &RegressionData::with_intercept(data.y.clone(), data.locs.clone())?,
            graph,
            init,
            family,
        ),
        other => other,
    }
}
