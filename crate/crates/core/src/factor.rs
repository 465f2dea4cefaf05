//! Row-sparse Cholesky factors of approximate precision matrices.
//!
//! A factor stores, for every ordered position `i`, the regression
//! coefficients `b_i` on its directed neighbors and the conditional variance
//! `f_i`. The implied lower-triangular matrix is `L = F^{-1/2} (I - B)` and
//! the implied covariance is `(I - B)^{-1} F (I - B)^{-T}`. All vectors passed
//! to the methods below are indexed by ordered position.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::CovarianceSpec;
use crate::error::{check_len, NngpError, Result};
use crate::geometry::{LocationSet, NeighborGraph};
use crate::rng;

/// Relative floor on conditional variances, as a fraction of the marginal variance.
pub const CONDITIONAL_VARIANCE_FLOOR: f64 = 1e-12;

/// Which covariance the factor approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorTarget {
    /// Noise-free covariance `C` of the latent process.
    Latent,
    /// Noise-inclusive covariance `C + tau2 I` of the response.
    Response,
}

impl FactorTarget {
    fn includes_nugget(self) -> bool {
        matches!(self, FactorTarget::Response)
    }
}

#[derive(Debug, Clone)]
pub struct SparseCholesky {
    graph: Arc<NeighborGraph>,
    /// Coefficients aligned with the graph's compressed neighbor storage.
    b: Vec<f64>,
    f: Vec<f64>,
    inv_sqrt_f: Vec<f64>,
}

impl SparseCholesky {
    /// Assembles a factor from per-row coefficients and conditional variances.
    pub fn from_parts(graph: Arc<NeighborGraph>, b_rows: Vec<Vec<f64>>, f: Vec<f64>) -> Result<Self> {
        check_len(graph.len(), b_rows.len())?;
        check_len(graph.len(), f.len())?;
        let mut b = Vec::with_capacity(graph.edge_count());
        for (i, row) in b_rows.into_iter().enumerate() {
            check_len(graph.neighbors(i).len(), row.len())?;
            b.extend(row);
        }
        if let Some((row, &value)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(NngpError::NonPositiveConditionalVariance { row, value });
        }
        let inv_sqrt_f = f.iter().map(|v| 1.0 / v.sqrt()).collect();
        Ok(Self {
            graph,
            b,
            f,
            inv_sqrt_f,
        })
    }

    /// The identity factor: `B = 0`, `F = I`.
    pub fn identity(n: usize) -> Self {
        Self {
            graph: Arc::new(NeighborGraph::empty(n)),
            b: Vec::new(),
            f: vec![1.0; n],
            inv_sqrt_f: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn graph(&self) -> &Arc<NeighborGraph> {
        &self.graph
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.graph.neighbors(i)
    }

    pub fn b_row(&self, i: usize) -> &[f64] {
        &self.b[self.graph.row_range(i)]
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    /// `u = L v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), v.len())?;
        Ok((0..self.len()).map(|i| self.apply_row(i, v)).collect())
    }

    #[inline]
    pub(crate) fn apply_row(&self, i: usize, v: &[f64]) -> f64 {
        let mut acc = v[i];
        for (&j, &bij) in self.neighbors(i).iter().zip(self.b_row(i)) {
            acc -= bij * v[j];
        }
        acc * self.inv_sqrt_f[i]
    }

    /// Nonzero entries `(j, L_ij)` of row `i` of `L`, diagonal first.
    pub(crate) fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.inv_sqrt_f[i];
        std::iter::once((i, s)).chain(
            self.neighbors(i)
                .iter()
                .zip(self.b_row(i))
                .map(move |(&j, &b)| (j, -s * b)),
        )
    }

    /// Nonzero entries `(i, L_ij)` of every column `j` of `L`.
    pub(crate) fn column_entries(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.len()];
        for i in 0..self.len() {
            for (j, v) in self.row_entries(i) {
                cols[j].push((i, v));
            }
        }
        cols
    }

    /// Solves `L y = z` by forward substitution over the sparse rows.
    pub fn backsolve(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), z.len())?;
        let mut y = vec![0.0; self.len()];
        for i in 0..self.len() {
            let mut acc = z[i] * self.f[i].sqrt();
            for (&j, &bij) in self.neighbors(i).iter().zip(self.b_row(i)) {
                acc += bij * y[j];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// `log det` of the implied covariance, `sum_i log f_i`.
    pub fn log_det(&self) -> f64 {
        self.f.iter().map(|v| v.ln()).sum()
    }

    /// `u' C~^{-1} v = (L u)'(L v)`.
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(self.len(), u.len())?;
        check_len(self.len(), v.len())?;
        Ok((0..self.len())
            .map(|i| self.apply_row(i, u) * self.apply_row(i, v))
            .sum())
    }

    /// Draws `draws` independent vectors `L^{-1} z` with `z ~ N(0, I)`.
    ///
    /// Draw `d` uses the normals from [`rng::draw_normals`]`(seed, d, n)`, so
    /// draws are reproducible individually and independent of evaluation order.
    pub fn simulate(&self, seed: u64, draws: usize) -> Vec<Vec<f64>> {
        (0..draws)
            .into_par_iter()
            .map(|d| {
                let z = rng::draw_normals(seed, d as u64, self.len());
                self.backsolve(&z).expect("length matches by construction")
            })
            .collect()
    }

    /// Column `k` of `L^{-1}`; the implied covariance is `L^{-1} L^{-T}`.
    fn inverse_column(&self, k: usize) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        y[k] = self.f[k].sqrt();
        for i in k + 1..n {
            let mut acc = 0.0;
            for (&j, &bij) in self.neighbors(i).iter().zip(self.b_row(i)) {
                acc += bij * y[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Diagonal of the implied covariance, in `O(n^2 m)` time and `O(n)` memory.
    pub fn implied_variances(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|k| self.inverse_column(k).into_iter().map(|v| v * v).collect::<Vec<_>>())
            .reduce(
                || vec![0.0; n],
                |mut acc, col| {
                    acc.iter_mut().zip(col).for_each(|(a, c)| *a += c);
                    acc
                },
            )
    }

    /// The dense implied covariance `(I - B)^{-1} F (I - B)^{-T}`; small `n` only.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut inv = DMatrix::zeros(n, n);
        for k in 0..n {
            inv.set_column(k, &DVector::from_vec(self.inverse_column(k)));
        }
        &inv * inv.transpose()
    }
}

/// Builds the nearest-neighbor factor for `spec` over the ordered locations.
///
/// Each row solves a dense `|N(i)| x |N(i)|` symmetric positive-definite
/// system; rows are independent and are computed in parallel.
pub fn build_factor(
    locs: &LocationSet,
    graph: &Arc<NeighborGraph>,
    spec: &CovarianceSpec,
    target: FactorTarget,
) -> Result<SparseCholesky> {
    spec.validate()?;
    check_len(locs.len(), graph.len())?;
    let points = locs.ordered_points();
    let nugget = target.includes_nugget();
    let floor = CONDITIONAL_VARIANCE_FLOOR * spec.sigma2;
    let variance = spec.total_variance(nugget);

    let rows: Vec<(Vec<f64>, f64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nb = graph.neighbors(i);
            let k = nb.len();
            if k == 0 {
                return Ok((Vec::new(), variance));
            }
            let block = DMatrix::from_fn(k, k, |a, c| {
                if a == c {
                    variance
                } else {
                    spec.between(&points[nb[a]], &points[nb[c]], false)
                }
            });
            let rhs = DVector::from_fn(k, |a, _| spec.between(&points[nb[a]], &points[i], false));
            let chol = block.cholesky().ok_or(NngpError::SingularNeighborBlock { row: i })?;
            let b = chol.solve(&rhs);
            let f = variance - rhs.dot(&b);
            if !(f > floor) {
                return Err(NngpError::NonPositiveConditionalVariance { row: i, value: f });
            }
            Ok((b.as_slice().to_vec(), f))
        })
        .collect::<Result<_>>()?;

    let (b_rows, f): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    SparseCholesky::from_parts(Arc::clone(graph), b_rows, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{cross_covariance, KernelFamily};
    use crate::geometry::{build_neighbor_graph, order_locations, OrderingStrategy, Point};
    use rand::Rng;

    fn random_locs(n: usize, seed: u64) -> LocationSet {
        let mut r = rng::seeded(seed);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(r.random(), r.random())).collect();
        order_locations(&pts, OrderingStrategy::CoordinateSort).unwrap()
    }

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

    fn exp_spec(tau2: f64) -> CovarianceSpec {
        CovarianceSpec::new(KernelFamily::Exponential, 1.0, 3.0, tau2).unwrap()
    }

    #[test]
    fn single_location_factor() {
        let locs = random_locs(1, 1);
        let g = build_neighbor_graph(&locs, 3).unwrap();
        let spec = CovarianceSpec::new(KernelFamily::Exponential, 2.0, 1.0, 0.5).unwrap();
        let lat = build_factor(&locs, &g, &spec, FactorTarget::Latent).unwrap();
        let resp = build_factor(&locs, &g, &spec, FactorTarget::Response).unwrap();
        assert_eq!(lat.f(), &[2.0]);
        assert_eq!(resp.f(), &[2.5]);
        assert!(lat.b_row(0).is_empty());
        assert!((lat.apply(&[3.0]).unwrap()[0] - 3.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((lat.backsolve(&[3.0]).unwrap()[0] - 3.0 * 2f64.sqrt()).abs() < 1e-15);
        assert!((lat.log_det() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_points_match_conditional_formula() {
        let d: f64 = 0.3;
        let pts = [Point::new(0.0, 0.0), Point::new(d, 0.0)];
        let locs = order_locations(&pts, OrderingStrategy::CoordinateSort).unwrap();
        let g = build_neighbor_graph(&locs, 1).unwrap();
        let phi = 2.0;
        let spec = CovarianceSpec::new(KernelFamily::Exponential, 1.0, phi, 0.0).unwrap();
        let chol = build_factor(&locs, &g, &spec, FactorTarget::Latent).unwrap();
        let e = (-phi * d).exp();
        assert!((chol.b_row(1)[0] - e).abs() < 1e-15);
        assert!((chol.f()[1] - (1.0 - e * e)).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let locs = random_locs(20, 2);
        let g = build_neighbor_graph(&locs, 4).unwrap();
        let chol = build_factor(&locs, &g, &exp_spec(0.1), FactorTarget::Response).unwrap();
        assert!(chol.apply(&[0.0; 20]).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(chol.quad_form(&[0.0; 20], &[0.0; 20]).unwrap(), 0.0);
    }

    #[test]
    fn apply_and_backsolve_match_dense_l() {
        let locs = random_locs(50, 3);
        let g = build_neighbor_graph(&locs, 5).unwrap();
        let chol = build_factor(&locs, &g, &exp_spec(0.05), FactorTarget::Response).unwrap();
        let l = dense_l(&chol);
        let v: Vec<f64> = rng::draw_normals(1, 0, 50);
        let dense_u = &l * DVector::from_vec(v.clone());
        let u = chol.apply(&v).unwrap();
        for i in 0..50 {
            assert!((u[i] - dense_u[i]).abs() < 1e-12);
        }
        let z = rng::draw_normals(2, 0, 50);
        let y = chol.backsolve(&z).unwrap();
        let dense_y = l.solve_lower_triangular(&DVector::from_vec(z)).unwrap();
        for i in 0..50 {
            assert!((y[i] - dense_y[i]).abs() < 1e-10 * (1.0 + dense_y[i].abs()));
        }
    }

    #[test]
    fn full_history_reproduces_dense_covariance() {
        let locs = random_locs(100, 4);
        let g = build_neighbor_graph(&locs, 99).unwrap();
        for (target, nugget) in [(FactorTarget::Latent, false), (FactorTarget::Response, true)] {
            let spec = exp_spec(0.2);
            let chol = build_factor(&locs, &g, &spec, target).unwrap();
            let dense = cross_covariance(&spec, locs.ordered_points(), locs.ordered_points(), nugget);
            let implied = chol.implied_covariance();
            assert!((implied - &dense).amax() < 1e-8);
            let dense_logdet = 2.0 * dense.cholesky().unwrap().l().diagonal().map(f64::ln).sum();
            assert!((chol.log_det() - dense_logdet).abs() < 1e-8);
        }
    }

    #[test]
    fn implied_variances_match_dense_reconstruction() {
        let locs = random_locs(40, 5);
        let g = build_neighbor_graph(&locs, 3).unwrap();
        let chol = build_factor(&locs, &g, &exp_spec(0.0), FactorTarget::Latent).unwrap();
        let diag = chol.implied_variances();
        let dense = chol.implied_covariance();
        for i in 0..40 {
            assert!((diag[i] - dense[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma2_scales_f_only() {
        let locs = random_locs(40, 6);
        let g = build_neighbor_graph(&locs, 6).unwrap();
        let base = CovarianceSpec::new(KernelFamily::Matern32, 1.0, 5.0, 0.0).unwrap();
        let scaled = CovarianceSpec { sigma2: 3.5, ..base };
        let a = build_factor(&locs, &g, &base, FactorTarget::Latent).unwrap();
        let b = build_factor(&locs, &g, &scaled, FactorTarget::Latent).unwrap();
        for i in 0..40 {
            assert!((b.f()[i] - 3.5 * a.f()[i]).abs() < 1e-12);
            for (x, y) in a.b_row(i).iter().zip(b.b_row(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_factor_simulation_returns_raw_normals() {
        let chol = SparseCholesky::identity(25);
        let draws = chol.simulate(42, 3);
        for (d, draw) in draws.iter().enumerate() {
            assert_eq!(draw, &rng::draw_normals(42, d as u64, 25));
        }
        assert_eq!(draws, chol.simulate(42, 3));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let chol = SparseCholesky::identity(3);
        assert!(matches!(chol.apply(&[1.0]), Err(NngpError::DimensionMismatch { .. })));
        assert!(chol.backsolve(&[1.0; 4]).is_err());
        assert!(chol.quad_form(&[1.0; 3], &[1.0; 2]).is_err());
    }

    #[test]
    fn degenerate_geometry_trips_the_floor() {
        // Two nearly coincident points under a very smooth kernel.
        let pts = [Point::new(0.0, 0.0), Point::new(1e-9, 0.0)];
        let locs = order_locations(&pts, OrderingStrategy::CoordinateSort).unwrap();
        let g = build_neighbor_graph(&locs, 1).unwrap();
        let spec = CovarianceSpec::new(KernelFamily::Gaussian, 1.0, 1.0, 0.0).unwrap();
        let err = build_factor(&locs, &g, &spec, FactorTarget::Latent).unwrap_err();
        assert!(matches!(err, NngpError::NonPositiveConditionalVariance { row: 1, .. }));
    }
}
