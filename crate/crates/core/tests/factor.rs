mod common;

use std::sync::Arc;

use common::{dense_logdet, dense_quad_form, max_abs};
use nalgebra::{DMatrix, DVector};
use nngp::dense::sample_covariance;
use nngp::experiments::uniform_points;
use nngp::rng::{draw_normals, seeded, standard_normals};
use nngp::{
    build_factor, build_neighbor_graph, cross_covariance, order_locations, CovarianceSpec, FactorTarget, KernelFamily,
    LocationSet, NeighborGraph, OrderingStrategy, Point, SparseCholesky,
};
use proptest::prelude::*;

fn setup(n: usize, m: usize, seed: u64, spec: &CovarianceSpec, target: FactorTarget) -> (LocationSet, SparseCholesky) {
    let locs = order_locations(&uniform_points(n, seed), OrderingStrategy::CoordinateSort).unwrap();
    let graph = build_neighbor_graph(&locs, m).unwrap();
    let chol = build_factor(&locs, &graph, spec, target).unwrap();
    (locs, chol)
}

/// `L = F^{-1/2} (I - B)` assembled densely.
fn dense_l(chol: &SparseCholesky) -> DMatrix<f64> {
    let n = chol.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = 1.0 / chol.f()[i].sqrt();
        l[(i, i)] = s;
        for (&j, &b) in chol.neighbors(i).iter().zip(chol.b_row(i)) {
            l[(i, j)] = -b * s;
        }
    }
    l
}

fn spec(family: KernelFamily, tau2: f64) -> CovarianceSpec {
    CovarianceSpec::new(family, 1.3, 5.0, tau2).unwrap()
}

#[test]
fn single_site_factor() {
    let s = spec(KernelFamily::Exponential, 0.2);
    let locs = order_locations(&[Point::new(0.5, 0.5)], OrderingStrategy::CoordinateSort).unwrap();
    let graph = build_neighbor_graph(&locs, 3).unwrap();
    let latent = build_factor(&locs, &graph, &s, FactorTarget::Latent).unwrap();
    let response = build_factor(&locs, &graph, &s, FactorTarget::Response).unwrap();
    assert!((latent.f()[0] - 1.3).abs() < 1e-15);
    assert!((response.f()[0] - 1.5).abs() < 1e-15);
    assert!((latent.apply(&[2.0]).unwrap()[0] - 2.0 / 1.3f64.sqrt()).abs() < 1e-15);
    assert!((latent.backsolve(&[2.0]).unwrap()[0] - 2.0 * 1.3f64.sqrt()).abs() < 1e-15);
    assert!((latent.log_det() - 1.3f64.ln()).abs() < 1e-15);
}

#[test]
fn two_site_conditional() {
    let s = CovarianceSpec::new(KernelFamily::Exponential, 1.0, 2.0, 0.0).unwrap();
    let d = 0.3;
    let locs = order_locations(
        &[Point::new(0.0, 0.0), Point::new(d, 0.0)],
        OrderingStrategy::CoordinateSort,
    )
    .unwrap();
    let graph = build_neighbor_graph(&locs, 1).unwrap();
    let chol = build_factor(&locs, &graph, &s, FactorTarget::Latent).unwrap();
    let rho = (-2.0 * d).exp();
    assert!((chol.b_row(1)[0] - rho).abs() < 1e-14);
    assert!((chol.f()[1] - (1.0 - rho * rho)).abs() < 1e-14);
}

#[test]
fn full_neighbor_sets_reproduce_the_covariance() {
    for family in [
        KernelFamily::Exponential,
        KernelFamily::Matern32,
        KernelFamily::Gaussian,
    ] {
        for target in [FactorTarget::Latent, FactorTarget::Response] {
            let s = CovarianceSpec::new(family, 1.0, 3.0, 0.1).unwrap();
            let (locs, chol) = setup(100, 99, 21, &s, target);
            let dense = cross_covariance(
                &s,
                locs.ordered_points(),
                locs.ordered_points(),
                matches!(target, FactorTarget::Response),
            );
            let err = max_abs(&(chol.implied_covariance() - &dense));
            assert!(err < 1e-8, "{family} {target:?}: {err}");
        }
    }
}

#[test]
fn apply_and_backsolve_match_dense_algebra() {
    let s = spec(KernelFamily::Matern32, 0.05);
    let (_, chol) = setup(50, 5, 2, &s, FactorTarget::Response);
    let l = dense_l(&chol);
    let v = standard_normals(&mut seeded(3), 50);
    let lv = &l * DVector::from_column_slice(&v);
    let ours = chol.apply(&v).unwrap();
    assert!(ours.iter().zip(lv.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    let solved = l.solve_lower_triangular(&DVector::from_column_slice(&v)).unwrap();
    let ours = chol.backsolve(&v).unwrap();
    assert!(ours
        .iter()
        .zip(solved.iter())
        .all(|(a, b)| (a - b).abs() < 1e-10 * (1.0 + b.abs())));
    assert!(chol.apply(&[0.0; 50]).unwrap().iter().all(|v| *v == 0.0));
    assert!(chol.apply(&[0.0; 49]).is_err());
}

#[test]
fn precision_and_covariance_identities() {
    for m in [1, 5, 10] {
        let s = spec(KernelFamily::Exponential, 0.1);
        let (_, chol) = setup(80, m, 30 + m as u64, &s, FactorTarget::Response);
        let l = dense_l(&chol);
        let c = chol.implied_covariance();
        let ident = &l * &c * l.transpose();
        assert!(max_abs(&(ident - DMatrix::identity(80, 80))) < 1e-8);
        let precision = c.clone().try_inverse().unwrap();
        let ltl = l.transpose() * &l;
        assert!(max_abs(&(precision - ltl)) < 1e-6 * max_abs(&(l.transpose() * &l)));
    }
}

#[test]
fn log_det_and_quad_form_match_dense_oracles() {
    let s = spec(KernelFamily::Exponential, 0.1);
    let (locs, chol) = setup(50, 49, 8, &s, FactorTarget::Response);
    let dense = cross_covariance(&s, locs.ordered_points(), locs.ordered_points(), true);
    assert!(((chol.log_det() - dense_logdet(&dense)) / dense_logdet(&dense)).abs() < 1e-8);

    let (locs, chol) = setup(40, 39, 9, &s, FactorTarget::Response);
    let dense = cross_covariance(&s, locs.ordered_points(), locs.ordered_points(), true);
    let u = standard_normals(&mut seeded(1), 40);
    let v = standard_normals(&mut seeded(2), 40);
    let ours = chol.quad_form(&u, &v).unwrap();
    let oracle = dense_quad_form(&dense, &u, &v);
    assert!((ours - oracle).abs() < 1e-8 * oracle.abs().max(1.0));
    assert_eq!(chol.quad_form(&[0.0; 40], &[0.0; 40]).unwrap(), 0.0);
}

#[test]
fn constant_conditional_variances_give_n_log_c() {
    let graph = Arc::new(NeighborGraph::empty(7));
    let chol = SparseCholesky::from_parts(graph, vec![Vec::new(); 7], vec![2.5; 7]).unwrap();
    assert!((chol.log_det() - 7.0 * 2.5f64.ln()).abs() < 1e-13);
    let bad = SparseCholesky::from_parts(Arc::new(NeighborGraph::empty(2)), vec![Vec::new(); 2], vec![1.0, 0.0]);
    assert!(bad.is_err());
}

#[test]
fn identity_factor_simulates_raw_normals() {
    let chol = SparseCholesky::identity(25);
    let draws = chol.simulate(77, 4);
    for (d, draw) in draws.iter().enumerate() {
        let z = draw_normals(77, d as u64, 25);
        assert!(draw.iter().zip(&z).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(chol.simulate(77, 4), draws);
}

#[test]
fn simulation_covariance_matches_dense_within_monte_carlo_error() {
    let s = spec(KernelFamily::Exponential, 0.0);
    let (locs, chol) = setup(50, 49, 12, &s, FactorTarget::Latent);
    let r = 10_000;
    let draws = chol.simulate(5, r);
    let sample = sample_covariance(&draws).unwrap();
    let c = cross_covariance(&s, locs.ordered_points(), locs.ordered_points(), false);
    for i in 0..50 {
        for j in 0..50 {
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)] * c[(i, j)]) / r as f64).sqrt();
            assert!((sample[(i, j)] - c[(i, j)]).abs() < 5.0 * se, "({i}, {j})");
        }
    }
}

fn check_scaling(seed: u64, n: usize, c: f64, family: KernelFamily, tol: f64) -> Result<(), TestCaseError> {
    let base = CovarianceSpec::new(family, 1.0, 6.0, 0.0).unwrap();
    let scaled = CovarianceSpec { sigma2: c, ..base };
    let (_, a) = setup(n, 6, seed, &base, FactorTarget::Latent);
    let (_, b) = setup(n, 6, seed, &scaled, FactorTarget::Latent);
    for i in 0..n {
        prop_assert!((b.f()[i] - c * a.f()[i]).abs() <= tol * c * a.f()[i]);
        // Strongly correlated neighbors give large coefficients; compare on their scale.
        let scale = a.b_row(i).iter().fold(1.0f64, |s, v| s.max(v.abs()));
        for (x, y) in a.b_row(i).iter().zip(b.b_row(i)) {
            prop_assert!((x - y).abs() < tol * scale, "b {x} vs {y}");
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn backsolve_inverts_apply(seed in any::<u64>(), n in 1usize..100, m in 1usize..12, k in 0usize..3) {
        let family = [KernelFamily::Exponential, KernelFamily::Matern32, KernelFamily::Gaussian][k];
        let s = CovarianceSpec::new(family, 0.7, 4.0, 0.1).unwrap();
        let (_, chol) = setup(n, m, seed, &s, FactorTarget::Response);
        let v = standard_normals(&mut seeded(seed ^ 5), n);
        let back = chol.backsolve(&chol.apply(&v).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn quad_form_is_symmetric(seed in any::<u64>(), n in 2usize..60) {
        let s = spec(KernelFamily::Exponential, 0.1);
        let (_, chol) = setup(n, 5, seed, &s, FactorTarget::Response);
        let u = standard_normals(&mut seeded(seed ^ 1), n);
        let v = standard_normals(&mut seeded(seed ^ 2), n);
        let (a, b) = (chol.quad_form(&u, &v).unwrap(), chol.quad_form(&v, &u).unwrap());
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        prop_assert!(chol.quad_form(&u, &u).unwrap() >= 0.0);
    }

    #[test]
    fn scaling_sigma2_scales_only_f(seed in any::<u64>(), n in 2usize..60, c in 0.1f64..10.0, k in 0usize..2) {
        let family = [KernelFamily::Exponential, KernelFamily::Matern32][k];
        check_scaling(seed, n, c, family, 1e-8)?;
    }

    /// Powers of four scale every intermediate exactly, so even the
    /// ill-conditioned Gaussian blocks reproduce `b` to rounding.
    #[test]
    fn exact_power_scaling_for_every_kernel(seed in any::<u64>(), n in 2usize..60, e in -3i32..4, k in 0usize..3) {
        let family = [KernelFamily::Exponential, KernelFamily::Matern32, KernelFamily::Gaussian][k];
        check_scaling(seed, n, 4f64.powi(e), family, 1e-12)?;
    }
}
