//! Dense-matrix baselines used by the experiment drivers.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{cross_covariance, CovarianceSpec};
use crate::error::{NngpError, Result};
use crate::geometry::Point;

/// Largest `n` for which a dense `n x n` covariance is formed (about 512 MB).
pub const DENSE_MAX_N: usize = 8000;

pub fn ensure_dense_feasible(n: usize) -> Result<()> {
    if n > DENSE_MAX_N {
        Err(NngpError::TooLargeForDense { n, limit: DENSE_MAX_N })
    } else {
        Ok(())
    }
}

/// Full Gaussian process on a fixed point set, sampled through a dense Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseGp {
    lower: DMatrix<f64>,
}

impl DenseGp {
    pub fn new(points: &[Point], spec: &CovarianceSpec, include_nugget: bool) -> Result<Self> {
        ensure_dense_feasible(points.len())?;
        let cov = cross_covariance(spec, points, points, include_nugget);
        let chol = cov
            .cholesky()
            .ok_or(NngpError::NotPositiveDefinite { eigenvalue: f64::NAN })?;
        Ok(Self { lower: chol.unpack() })
    }

    pub fn len(&self) -> usize {
        self.lower.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.nrows() == 0
    }

    /// `L z` for the lower Cholesky factor `L` of the covariance.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.lower.row(i);
            *o = (0..=i).map(|j| row[j] * z[j]).sum();
        }
        out
    }

    /// Correlates every column of `z` at once.
    pub fn correlate_columns(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.lower * z
    }
}

/// Unbiased sample covariance of equally long vectors (divisor `R - 1`).
pub fn sample_covariance(draws: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = draws.len();
    if r < 2 {
        return Err(NngpError::InvalidParameter(
            "a sample covariance needs at least two replicates".into(),
        ));
    }
    let n = draws[0].len();
    let mut centered = DMatrix::zeros(n, r);
    for (k, d) in draws.iter().enumerate() {
        crate::error::check_len(n, d.len())?;
        centered.set_column(k, &DVector::from_column_slice(d));
    }
    Ok(sample_covariance_columns(centered))
}

/// Sample covariance of the columns of an `n x R` matrix.
pub fn sample_covariance_columns(mut columns: DMatrix<f64>) -> DMatrix<f64> {
    let r = columns.ncols();
    let means = columns.column_mean();
    for mut col in columns.column_iter_mut() {
        col -= &means;
    }
    let mut cov = &columns * columns.transpose();
    cov /= (r - 1) as f64;
    cov
}
