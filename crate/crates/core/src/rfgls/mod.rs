//! Random forests for spatially correlated errors.
//!
//! Trees are grown on the decorrelated system `L y ~ L Z beta`, where `Z` is
//! the leaf-membership matrix of the tree and `L` a sparse Cholesky factor of
//! the working precision. With the identity factor every split decision
//! coincides with classic CART.

mod forest;
mod tree;

pub use forest::{fit_forest, predict_forest, working_covariance, ForestModel, ForestPrediction, KrigingContext};
pub use tree::{build_tree, TreeNode, MIN_RELATIVE_GAIN, TIE_RELATIVE_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, NngpError, Result};
use crate::factor::SparseCholesky;

pub const DEFAULT_MIN_NODE_SIZE: usize = 5;
pub const DEFAULT_TREES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub min_node_size: usize,
    /// `None` grows until nodes are too small to split.
    pub max_leaves: Option<usize>,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
    /// Draw each tree's rows of the decorrelated system with replacement.
    pub resample: bool,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            min_node_size: DEFAULT_MIN_NODE_SIZE,
            max_leaves: None,
            mtry: None,
            resample: true,
        }
    }
}

impl ForestHyper {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(NngpError::InvalidParameter("n_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(NngpError::InvalidParameter("min_node_size must be at least 1".into()));
        }
        if self.max_leaves == Some(0) {
            return Err(NngpError::InvalidParameter("max_leaves must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(NngpError::InvalidParameter("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1))
    }
}

/// Weighted least squares of `L y` on `L Z` where `Z` is given by `labels`
/// (leaf index per ordered position) and `weights` are row multiplicities of
/// the decorrelated system. Returns leaf values and the minimized loss, or
/// `None` when the normal equations are singular.
pub(crate) fn leaf_fit(
    labels: &[usize],
    n_leaves: usize,
    ly: &[f64],
    chol: &SparseCholesky,
    weights: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let n = labels.len();
    let mut gram = DMatrix::<f64>::zeros(n_leaves, n_leaves);
    let mut rhs = DVector::<f64>::zeros(n_leaves);
    let mut row: Vec<(usize, f64)> = Vec::new();
    let sparse_row = |i: usize, row: &mut Vec<(usize, f64)>| {
        row.clear();
        for (j, v) in chol.row_entries(i) {
            match row.iter_mut().find(|(k, _)| *k == labels[j]) {
                Some(e) => e.1 += v,
                None => row.push((labels[j], v)),
            }
        }
    };
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        sparse_row(i, &mut row);
        for &(a, va) in &row {
            rhs[a] += weights[i] * va * ly[i];
            for &(b, vb) in &row {
                gram[(a, b)] += weights[i] * va * vb;
            }
        }
    }
    let scale = gram.diagonal().max();
    let factor = gram.cholesky()?;
    let l = factor.l_dirty();
    if !(scale > 0.0) || (0..n_leaves).any(|k| l[(k, k)] * l[(k, k)] <= 1e-10 * scale) {
        return None;
    }
    let beta = factor.solve(&rhs);
    let mut loss = 0.0;
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        sparse_row(i, &mut row);
        let fitted: f64 = row.iter().map(|&(k, v)| v * beta[k]).sum();
        loss += weights[i] * (ly[i] - fitted).powi(2);
    }
    Some((beta.as_slice().to_vec(), loss))
}

/// Minimized GLS loss `(y - Z b)' L' P' P L (y - Z b)` for the membership
/// `labels` (ordered positions, leaf ids `0..k`).
///
/// `weights` holds the multiplicity of every decorrelated coordinate under
/// the resampling `P`; `None` is the identity. Returns `None` when a group is
/// invisible in the transformed system.
pub fn gls_split_cost(
    labels: &[usize],
    y: &[f64],
    chol: &SparseCholesky,
    weights: Option<&[f64]>,
) -> Result<Option<f64>> {
    check_len(chol.len(), labels.len())?;
    check_len(chol.len(), y.len())?;
    let ones;
    let weights = match weights {
        Some(w) => {
            check_len(chol.len(), w.len())?;
            w
        }
        None => {
            ones = vec![1.0; y.len()];
            &ones
        }
    };
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let ly = chol.apply(y)?;
    Ok(leaf_fit(labels, k, &ly, chol, weights).map(|(_, loss)| loss))
}
