#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use nngp::rfgls::TreeNode;
use nngp::{CovarianceSpec, Point};

/// Log-density of `N(mean, cov)` at `y` through a dense Cholesky factor.
pub fn dense_mvn_logpdf(y: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let r = DVector::from_fn(n, |i, _| y[i] - mean[i]);
    let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * z.norm_squared()
}

pub fn dense_logdet(cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `u' cov^{-1} v`.
pub fn dense_quad_form(cov: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let sv = chol.solve(&DVector::from_column_slice(v));
    DVector::from_column_slice(u).dot(&sv)
}

/// Simple kriging of zero-mean `resid` at `target` from all `points`.
pub fn dense_krige(points: &[Point], resid: &[f64], spec: &CovarianceSpec, target: &Point) -> (f64, f64) {
    let cov = nngp::cross_covariance(spec, points, points, true);
    let cross = nngp::cross_covariance(spec, points, std::slice::from_ref(target), true);
    let w = cov.lu().solve(&cross).expect("nonsingular");
    let mean = w.column(0).dot(&DVector::from_column_slice(resid));
    let var = spec.total_variance(true) - w.column(0).dot(&cross.column(0));
    (mean, var)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Classic CART grown breadth-first with the same candidate enumeration,
/// gain floor and tie rule as the forest trees, scoring splits by directly
/// computed sums of squared errors.
pub fn cart_reference(x: &DMatrix<f64>, y: &[f64], min_node_size: usize, max_leaves: Option<usize>) -> TreeNode {
    use nngp::rfgls::{MIN_RELATIVE_GAIN, TIE_RELATIVE_TOLERANCE};
    let n = y.len();
    let p = x.ncols();
    let sse = |idx: &[usize]| -> f64 {
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (y[i] - mean).powi(2)).sum()
    };
    let all: Vec<usize> = (0..n).collect();
    let root = sse(&all);
    let floor = MIN_RELATIVE_GAIN * root;
    let tie = TIE_RELATIVE_TOLERANCE * root;
    let total: f64 = y.iter().map(|v| v * v).sum();
    let splittable = root > 1e-24 * total;

    enum Node {
        Leaf(Vec<usize>),
        Split(usize, f64, usize, usize),
    }
    let mut nodes = vec![Node::Leaf(all)];
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut leaves = 1;
    let max_leaves = max_leaves.unwrap_or(usize::MAX);
    while let Some(at) = queue.pop_front() {
        if leaves >= max_leaves {
            break;
        }
        let Node::Leaf(members) = &nodes[at] else {
            unreachable!()
        };
        let members = members.clone();
        if !splittable || members.len() < 2 * min_node_size {
            continue;
        }
        let parent = sse(&members);
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..p {
            let mut order = members.clone();
            order.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
            let mut best_f: Option<(f64, f64)> = None;
            let mut best_red = floor;
            for k in 1..order.len() {
                let (lo, hi) = (x[(order[k - 1], f)], x[(order[k], f)]);
                if hi <= lo || k < min_node_size || order.len() - k < min_node_size {
                    continue;
                }
                let red = parent - sse(&order[..k]) - sse(&order[k..]);
                if red > best_red + tie {
                    let mid = 0.5 * (lo + hi);
                    best_red = red;
                    best_f = Some((if mid < hi { mid } else { lo }, red));
                }
            }
            if let Some((thr, red)) = best_f {
                if best.is_none_or(|(_, _, b)| red > b + tie) {
                    best = Some((f, thr, red));
                }
            }
        }
        let Some((f, thr, _)) = best else { continue };
        let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| x[(i, f)] <= thr);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf(l));
        nodes.push(Node::Leaf(r));
        nodes[at] = Node::Split(f, thr, li, ri);
        leaves += 1;
        queue.push_back(li);
        queue.push_back(ri);
    }
    fn build(nodes: &[Node], at: usize, y: &[f64]) -> TreeNode {
        match &nodes[at] {
            Node::Leaf(m) => TreeNode::Leaf {
                beta: m.iter().map(|&i| y[i]).sum::<f64>() / m.len() as f64,
            },
            Node::Split(f, t, l, r) => TreeNode::Split {
                feature: *f,
                threshold: *t,
                left: Box::new(build(nodes, *l, y)),
                right: Box::new(build(nodes, *r, y)),
            },
        }
    }
    build(&nodes, 0, y)
}

/// Structural equality with leaf values compared to `tol`.
pub fn same_tree(a: &TreeNode, b: &TreeNode, tol: f64) -> bool {
    match (a, b) {
        (TreeNode::Leaf { beta: x }, TreeNode::Leaf { beta: y }) => (x - y).abs() <= tol,
        (
            TreeNode::Split {
                feature: fa,
                threshold: ta,
                left: la,
                right: ra,
            },
            TreeNode::Split {
                feature: fb,
                threshold: tb,
                left: lb,
                right: rb,
            },
        ) => fa == fb && ta == tb && same_tree(la, lb, tol) && same_tree(ra, rb, tol),
        _ => false,
    }
}
