mod common;

use common::{cart_reference, same_tree};
use nalgebra::{DMatrix, DVector};
use nngp::experiments::uniform_points;
use nngp::rfgls::{
    build_tree, fit_forest, gls_split_cost, predict_forest, ForestHyper, ForestPrediction, KrigingContext, TreeNode,
};
use nngp::rng::{seeded, sub_seed};
use nngp::{
    build_factor, build_neighbor_graph, order_locations, CovarianceSpec, FactorTarget, KernelFamily, OrderingStrategy,
    RegressionData, SparseCholesky,
};
use proptest::prelude::*;
use rand::Rng;

fn random_chol(n: usize, seed: u64) -> SparseCholesky {
    let pts = uniform_points(n, seed);
    let locs = order_locations(&pts, OrderingStrategy::Random(seed)).unwrap();
    let graph = build_neighbor_graph(&locs, 5).unwrap();
    let spec = CovarianceSpec::new(KernelFamily::Exponential, 1.3, 5.0, 0.2).unwrap();
    build_factor(&locs, &graph, &spec, FactorTarget::Response).unwrap()
}

fn dense_l(chol: &SparseCholesky) -> DMatrix<f64> {
    let n = chol.len();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        l.set_column(j, &DVector::from_vec(chol.apply(&e).unwrap()));
    }
    l
}

/// `min_b |W^{1/2} L (y - Z b)|^2` by dense normal equations.
fn dense_cost(labels: &[usize], y: &[f64], chol: &SparseCholesky, weights: &[f64]) -> f64 {
    let n = y.len();
    let k = labels.iter().max().unwrap() + 1;
    let z = DMatrix::from_fn(n, k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
    let w = DMatrix::from_diagonal(&DVector::from_iterator(n, weights.iter().map(|v| v.sqrt())));
    let l = dense_l(chol);
    let a = &w * &l * z;
    let c = &w * &l * DVector::from_column_slice(y);
    let b = (a.transpose() * &a).lu().solve(&(a.transpose() * &c)).unwrap();
    (c - a * b).norm_squared()
}

fn regression(n: usize, p: usize, seed: u64) -> RegressionData {
    let mut g = seeded(seed);
    let pts = uniform_points(n, seed);
    let locs = order_locations(&pts, OrderingStrategy::CoordinateSort).unwrap();
    let x = DMatrix::from_fn(n, p, |_, _| g.random::<f64>());
    let y = (0..n)
        .map(|i| 2.0 * x[(i, 0)] + (5.0 * x[(i, p - 1)]).cos() + 0.2 * g.random::<f64>())
        .collect();
    RegressionData::new(y, x, locs).unwrap()
}

fn leaf_index(tree: &TreeNode, x: &[f64]) -> usize {
    fn walk(node: &TreeNode, x: &[f64], offset: usize) -> usize {
        match node {
            TreeNode::Leaf { .. } => offset,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    walk(left, x, offset)
                } else {
                    walk(right, x, offset + left.n_leaves())
                }
            }
        }
    }
    walk(tree, x, 0)
}

fn leaf_values(tree: &TreeNode) -> Vec<f64> {
    match tree {
        TreeNode::Leaf { beta } => vec![*beta],
        TreeNode::Split { left, right, .. } => {
            let mut v = leaf_values(left);
            v.extend(leaf_values(right));
            v
        }
    }
}

#[test]
fn split_cost_matches_dense_least_squares() {
    let n = 30;
    let chol = random_chol(n, 1);
    let mut g = seeded(2);
    let y: Vec<f64> = (0..n).map(|_| g.random::<f64>() * 4.0 - 2.0).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let weights: Vec<f64> = (0..n).map(|_| g.random_range(0..3) as f64).collect();
    let ones = vec![1.0; n];

    let ours = gls_split_cost(&labels, &y, &chol, None).unwrap().unwrap();
    let oracle = dense_cost(&labels, &y, &chol, &ones);
    assert!((ours - oracle).abs() < 1e-9 * oracle, "{ours} vs {oracle}");

    let ours = gls_split_cost(&labels, &y, &chol, Some(&weights)).unwrap().unwrap();
    let oracle = dense_cost(&labels, &y, &chol, &weights);
    assert!((ours - oracle).abs() < 1e-9 * oracle, "{ours} vs {oracle}");
}

#[test]
fn constant_response_costs_nothing() {
    let chol = random_chol(25, 3);
    let labels: Vec<usize> = (0..25).map(|i| usize::from(i >= 11)).collect();
    let y = [4.2; 25];
    assert!(gls_split_cost(&[0; 25], &y, &chol, None).unwrap().unwrap() < 1e-20);
    assert!(gls_split_cost(&labels, &y, &chol, None).unwrap().unwrap() < 1e-20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refining_a_partition_never_raises_the_cost(seed in 0u64..1000, k in 1usize..4) {
        let n = 24;
        let chol = random_chol(n, seed);
        let mut g = seeded(seed + 1);
        let y: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
        let coarse: Vec<usize> = (0..n).map(|i| i % k).collect();
        let fine: Vec<usize> = coarse.iter().enumerate().map(|(i, &c)| 2 * c + usize::from(i % 5 < 2)).collect();
        let a = gls_split_cost(&coarse, &y, &chol, None).unwrap().unwrap();
        let b = gls_split_cost(&fine, &y, &chol, None).unwrap().unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn relabeling_groups_leaves_the_cost_unchanged(seed in 0u64..1000) {
        let n = 20;
        let chol = random_chol(n, seed);
        let mut g = seeded(seed);
        let y: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let swapped: Vec<usize> = labels.iter().map(|&l| 2 - l).collect();
        let a = gls_split_cost(&labels, &y, &chol, None).unwrap().unwrap();
        let b = gls_split_cost(&swapped, &y, &chol, None).unwrap().unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-12));
    }
}

#[test]
fn leaf_values_solve_the_gls_normal_equations() {
    let data = regression(120, 3, 4);
    let chol = random_chol(120, 5);
    let hyper = ForestHyper {
        n_trees: 1,
        min_node_size: 10,
        resample: false,
        mtry: Some(3),
        ..Default::default()
    };
    let tree = build_tree(&data, &chol, 0, &hyper).unwrap();
    assert!(tree.n_leaves() > 1);
    let x = data.ordered_x();
    let k = tree.n_leaves();
    let z = DMatrix::from_fn(x.nrows(), k, |i, c| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        if leaf_index(&tree, &row) == c {
            1.0
        } else {
            0.0
        }
    });
    let beta = DVector::from_vec(leaf_values(&tree));
    let l = dense_l(&chol);
    let resid = &l * (DVector::from_vec(data.ordered_y()) - &z * beta);
    let score = (l * z).transpose() * resid;
    assert!(score.amax() < 1e-8, "{score}");
}

#[test]
fn identity_factor_reproduces_cart() {
    for seed in 0..5 {
        let data = regression(80, 2, seed);
        let hyper = ForestHyper {
            n_trees: 1,
            min_node_size: 4,
            resample: false,
            mtry: Some(2),
            ..Default::default()
        };
        let tree = build_tree(&data, &SparseCholesky::identity(80), 0, &hyper).unwrap();
        let oracle = cart_reference(&data.ordered_x(), &data.ordered_y(), 4, None);
        assert!(same_tree(&tree, &oracle, 1e-10), "seed {seed}");
    }
}

#[test]
fn forest_trees_are_reproducible_from_their_seeds() {
    let data = regression(90, 4, 6);
    let chol = random_chol(90, 7);
    let hyper = ForestHyper {
        n_trees: 6,
        min_node_size: 5,
        ..Default::default()
    };
    let forest = fit_forest(&data, &chol, &hyper, 11).unwrap();
    assert_eq!(forest.n_trees(), 6);
    for (t, tree) in forest.trees.iter().enumerate() {
        assert_eq!(forest.resample_seeds[t], sub_seed(11, t as u64));
        assert_eq!(
            tree,
            &build_tree(&data, &chol, forest.resample_seeds[t], &hyper).unwrap()
        );
    }
    let again = fit_forest(&data, &chol, &hyper, 11).unwrap();
    assert_eq!(again.trees, forest.trees);
    assert_ne!(fit_forest(&data, &chol, &hyper, 12).unwrap().trees, forest.trees);

    let single = ForestHyper {
        n_trees: 1,
        resample: false,
        mtry: Some(4),
        ..hyper
    };
    let one = fit_forest(&data, &chol, &single, 3).unwrap();
    assert_eq!(one.trees[0], build_tree(&data, &chol, 999, &single).unwrap());
}

#[test]
fn mean_prediction_averages_the_trees() {
    let data = regression(70, 3, 8);
    let chol = random_chol(70, 9);
    let hyper = ForestHyper {
        n_trees: 5,
        ..Default::default()
    };
    let forest = fit_forest(&data, &chol, &hyper, 1).unwrap();
    let x_new = regression(15, 3, 10).x;
    let preds = predict_forest(&forest, &x_new, ForestPrediction::MeanOnly).unwrap();
    for (r, p) in preds.iter().enumerate() {
        let row: Vec<f64> = x_new.row(r).iter().copied().collect();
        let avg = forest.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / 5.0;
        assert!((p - avg).abs() < 1e-14);
    }
    assert!(predict_forest(&forest, &DMatrix::zeros(2, 2), ForestPrediction::MeanOnly).is_err());
}

#[test]
fn constant_response_gives_constant_predictions() {
    let mut data = regression(50, 2, 11);
    data.y = vec![-1.5; 50];
    let chol = random_chol(50, 12);
    let forest = fit_forest(
        &data,
        &chol,
        &ForestHyper {
            n_trees: 4,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    let x_new = regression(20, 2, 13).x;
    for p in predict_forest(&forest, &x_new, ForestPrediction::MeanOnly).unwrap() {
        assert!((p + 1.5).abs() < 1e-10);
    }
}

#[test]
fn kriging_interpolates_training_sites_without_nugget() {
    let data = regression(60, 2, 14);
    let chol = random_chol(60, 15);
    let forest = fit_forest(
        &data,
        &chol,
        &ForestHyper {
            n_trees: 3,
            ..Default::default()
        },
        4,
    )
    .unwrap();
    let spec = CovarianceSpec::new(KernelFamily::Exponential, 1.0, 5.0, 0.0).unwrap();
    let train_points = data.locs.coords().to_vec();
    let ctx = KrigingContext {
        train: &data,
        spec: &spec,
        new_points: &train_points,
        m: 5,
    };
    let preds = predict_forest(&forest, &data.x, ForestPrediction::MeanPlusKriging(ctx)).unwrap();
    for (p, y) in preds.iter().zip(&data.y) {
        assert!((p - y).abs() < 1e-9, "{p} vs {y}");
    }
}
