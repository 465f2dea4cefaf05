use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{leaf_fit, ForestHyper};
use crate::error::{check_len, Result};
use crate::factor::SparseCholesky;
use crate::inference::RegressionData;
use crate::rng::{self, SeededRng};

/// Splits must reduce the loss by more than this fraction of the root loss.
pub const MIN_RELATIVE_GAIN: f64 = 1e-10;
/// Two candidates whose reductions differ by less than this fraction of the
/// root loss are tied; the earlier one (lower feature, then lower threshold) wins.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        beta: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { beta } => return *beta,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Data shared by every tree of a forest, in ordered positions.
pub(crate) struct TreeContext<'a> {
    features: Vec<Vec<f64>>,
    y: Vec<f64>,
    ly: Vec<f64>,
    chol: &'a SparseCholesky,
    columns: Vec<Vec<(usize, f64)>>,
    hyper: ForestHyper,
}

enum Building {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

struct Candidate {
    feature: usize,
    threshold: f64,
    reduction: f64,
}

/// Orthonormal basis (under the row weights) of the transformed leaf columns
/// together with the current residual of `L y`.
struct Basis<'w> {
    rows: Vec<Vec<f64>>,
    resid: Vec<f64>,
    weights: &'w [f64],
}

impl Basis<'_> {
    fn project_out(&self, q: &mut [f64]) {
        let k = self.rows.first().map_or(0, Vec::len);
        for _ in 0..2 {
            let mut u = vec![0.0; k];
            for (i, row) in self.rows.iter().enumerate() {
                let wq = self.weights[i] * q[i];
                if wq != 0.0 {
                    for (a, b) in u.iter_mut().zip(row) {
                        *a += wq * b;
                    }
                }
            }
            for (qi, row) in q.iter_mut().zip(&self.rows) {
                *qi -= row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    fn weighted_norm2(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.weights).map(|(a, w)| w * a * a).sum()
    }

    /// Adds the direction `q` if it is not already spanned.
    fn push(&mut self, mut q: Vec<f64>) -> bool {
        let before = self.weighted_norm2(&q);
        self.project_out(&mut q);
        let after = self.weighted_norm2(&q);
        if !(after > 1e-10 * before) {
            return false;
        }
        let norm = after.sqrt();
        q.iter_mut().for_each(|v| *v /= norm);
        let coef: f64 = self
            .resid
            .iter()
            .zip(&q)
            .zip(self.weights)
            .map(|((r, v), w)| w * r * v)
            .sum();
        for ((row, r), v) in self.rows.iter_mut().zip(self.resid.iter_mut()).zip(&q) {
            row.push(*v);
            *r -= coef * v;
        }
        true
    }

    fn loss(&self) -> f64 {
        self.weighted_norm2(&self.resid)
    }
}

impl<'a> TreeContext<'a> {
    pub(crate) fn new(data: &RegressionData, chol: &'a SparseCholesky, hyper: ForestHyper) -> Result<Self> {
        hyper.validate()?;
        check_len(data.len(), chol.len())?;
        let x = data.ordered_x();
        let features = (0..x.ncols()).map(|c| x.column(c).as_slice().to_vec()).collect();
        let y = data.ordered_y();
        let ly = chol.apply(&y)?;
        Ok(Self {
            features,
            y,
            ly,
            chol,
            columns: chol.column_entries(),
            hyper,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.y.len()
    }

    /// Multiplicities of the decorrelated rows for one tree.
    pub(crate) fn resample_weights(&self, rng: &mut SeededRng) -> Vec<f64> {
        let n = self.len();
        if !self.hyper.resample {
            return vec![1.0; n];
        }
        let mut w = vec![0.0; n];
        for _ in 0..n {
            w[rng.random_range(0..n)] += 1.0;
        }
        w
    }

    fn transformed_indicator(&self, members: &[usize]) -> Vec<f64> {
        let mut q = vec![0.0; self.len()];
        for &j in members {
            for &(i, v) in &self.columns[j] {
                q[i] += v;
            }
        }
        q
    }

    fn scan_feature(
        &self,
        feature: usize,
        members: &[usize],
        basis: &Basis<'_>,
        floor: f64,
        tie: f64,
    ) -> Option<Candidate> {
        let x = &self.features[feature];
        let mut order = members.to_vec();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let min = self.hyper.min_node_size;
        let w = basis.weights;
        let k = basis.rows.first().map_or(0, Vec::len);
        let mut q = vec![0.0; self.len()];
        let mut u = vec![0.0; k];
        let (mut qq, mut rq) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        let mut best_red = floor;
        for (pos, &j) in order.iter().enumerate().take(order.len() - 1) {
            for &(i, v) in &self.columns[j] {
                let wi = w[i];
                if wi != 0.0 {
                    qq += wi * v * (2.0 * q[i] + v);
                    rq += wi * basis.resid[i] * v;
                    for (a, b) in u.iter_mut().zip(&basis.rows[i]) {
                        *a += wi * v * b;
                    }
                }
                q[i] += v;
            }
            let (lo, hi) = (x[j], x[order[pos + 1]]);
            let n_left = pos + 1;
            if hi <= lo || n_left < min || order.len() - n_left < min {
                continue;
            }
            let s = qq - u.iter().map(|a| a * a).sum::<f64>();
            if !(s > 1e-10 * qq) {
                continue;
            }
            let reduction = rq * rq / s;
            if reduction > best_red + tie {
                let mid = 0.5 * (lo + hi);
                let threshold = if mid < hi { mid } else { lo };
                best_red = reduction;
                best = Some(Candidate {
                    feature,
                    threshold,
                    reduction,
                });
            }
        }
        best
    }

    pub(crate) fn grow(&self, weights: &[f64], rng: &mut SeededRng) -> TreeNode {
        let n = self.len();
        let p = self.features.len();
        let mtry = self.hyper.effective_mtry(p);
        let min = self.hyper.min_node_size;
        let max_leaves = self.hyper.max_leaves.unwrap_or(usize::MAX);

        let mut basis = Basis {
            rows: vec![Vec::new(); n],
            resid: self.ly.clone(),
            weights,
        };
        let all: Vec<usize> = (0..n).collect();
        let total = basis.loss();
        basis.push(self.transformed_indicator(&all));
        let root_loss = basis.loss();
        // a response that is constant up to rounding admits no meaningful split
        let splittable = root_loss > 1e-24 * total;
        let floor = MIN_RELATIVE_GAIN * root_loss;
        let tie = TIE_RELATIVE_TOLERANCE * root_loss;

        let mut labels = vec![0usize; n];
        let mut members = vec![all];
        let mut nodes = vec![Building::Leaf(0)];
        let mut leaf_node = vec![0usize];
        let mut queue = VecDeque::from([0usize]);

        while let Some(leaf) = queue.pop_front() {
            if members.len() >= max_leaves {
                break;
            }
            if !splittable || members[leaf].len() < 2 * min || p == 0 {
                continue;
            }
            let mut tried = index::sample(rng, p, mtry).into_vec();
            tried.sort_unstable();
            let found: Vec<Option<Candidate>> = tried
                .par_iter()
                .map(|&f| self.scan_feature(f, &members[leaf], &basis, floor, tie))
                .collect();
            let mut best: Option<Candidate> = None;
            for c in found.into_iter().flatten() {
                if best.as_ref().is_none_or(|b| c.reduction > b.reduction + tie) {
                    best = Some(c);
                }
            }
            let Some(best) = best else { continue };

            let x = &self.features[best.feature];
            let (left, right): (Vec<usize>, Vec<usize>) = members[leaf].iter().partition(|&&i| x[i] <= best.threshold);
            if !basis.push(self.transformed_indicator(&left)) {
                continue;
            }
            let right_leaf = members.len();
            for &i in &right {
                labels[i] = right_leaf;
            }
            members[leaf] = left;
            members.push(right);

            let (l_node, r_node) = (nodes.len(), nodes.len() + 1);
            nodes.push(Building::Leaf(leaf));
            nodes.push(Building::Leaf(right_leaf));
            nodes[leaf_node[leaf]] = Building::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: l_node,
                right: r_node,
            };
            leaf_node[leaf] = l_node;
            leaf_node.push(r_node);
            queue.push_back(leaf);
            queue.push_back(right_leaf);
        }

        let betas = match leaf_fit(&labels, members.len(), &self.ly, self.chol, weights) {
            Some((beta, _)) => beta,
            None => members
                .iter()
                .map(|m| m.iter().map(|&i| self.y[i]).sum::<f64>() / m.len() as f64)
                .collect(),
        };
        assemble(&nodes, 0, &betas)
    }
}

fn assemble(nodes: &[Building], at: usize, betas: &[f64]) -> TreeNode {
    match nodes[at] {
        Building::Leaf(k) => TreeNode::Leaf { beta: betas[k] },
        Building::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(assemble(nodes, left, betas)),
            right: Box::new(assemble(nodes, right, betas)),
        },
    }
}

/// Grows one GLS regression tree on the columns of `data.x`.
///
/// The tree's resampling of the decorrelated rows and its feature subsets are
/// drawn from a generator seeded with `resample_seed`.
pub fn build_tree(
    data: &RegressionData,
    chol: &SparseCholesky,
    resample_seed: u64,
    hyper: &ForestHyper,
) -> Result<TreeNode> {
    let ctx = TreeContext::new(data, chol, *hyper)?;
    let mut g = rng::seeded(resample_seed);
    let w = ctx.resample_weights(&mut g);
    Ok(ctx.grow(&w, &mut g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{order_locations, OrderingStrategy, Point};
    use nalgebra::DMatrix;

    fn line_data(x: &[f64], y: &[f64]) -> RegressionData {
        let n = x.len();
        let pts: Vec<Point> = (0..n).map(|i| Point::new(i as f64, 0.0)).collect();
        let locs = order_locations(&pts, OrderingStrategy::CoordinateSort).unwrap();
        RegressionData::new(y.to_vec(), DMatrix::from_column_slice(n, 1, x), locs).unwrap()
    }

    fn plain() -> ForestHyper {
        ForestHyper {
            n_trees: 1,
            min_node_size: 2,
            resample: false,
            ..Default::default()
        }
    }

    #[test]
    fn step_function_split_location() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 7.0 { 1.0 } else { 4.0 }).collect();
        let data = line_data(&x, &y);
        let tree = build_tree(&data, &SparseCholesky::identity(20), 0, &plain()).unwrap();
        match &tree {
            TreeNode::Split {
                threshold, left, right, ..
            } => {
                assert_eq!(*threshold, 6.5);
                assert!(matches!(**left, TreeNode::Leaf { beta } if (beta - 1.0).abs() < 1e-12));
                assert!(matches!(**right, TreeNode::Leaf { beta } if (beta - 4.0).abs() < 1e-12));
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn constant_feature_gives_single_leaf() {
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let data = line_data(&[3.0; 12], &y);
        let tree = build_tree(&data, &SparseCholesky::identity(12), 0, &plain()).unwrap();
        assert_eq!(tree, TreeNode::Leaf { beta: 5.5 });
    }

    #[test]
    fn constant_response_is_not_split() {
        let x: Vec<f64> = (0..15).map(|i| (i * 7 % 15) as f64).collect();
        let data = line_data(&x, &[2.5; 15]);
        let tree = build_tree(&data, &SparseCholesky::identity(15), 0, &plain()).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert!((tree.predict(&[100.0]) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn max_leaves_and_min_node_size_respected() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 17) % 40) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.3).sin()).collect();
        let data = line_data(&x, &y);
        let hyper = ForestHyper {
            max_leaves: Some(4),
            ..plain()
        };
        let tree = build_tree(&data, &SparseCholesky::identity(40), 0, &hyper).unwrap();
        assert_eq!(tree.n_leaves(), 4);
        let hyper = ForestHyper {
            min_node_size: 15,
            ..plain()
        };
        let tree = build_tree(&data, &SparseCholesky::identity(40), 0, &hyper).unwrap();
        assert!(tree.n_leaves() <= 2);
    }
}
