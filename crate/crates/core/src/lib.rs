//! Nearest-neighbor sparse Cholesky factors of Gaussian-process precision
//! matrices, and the applications built on them: likelihood-based
//! estimation and kriging, a decorrelate/resample/re-correlate spatial
//! bootstrap, linear-time random-field simulation, GLS random forests, and
//! DAGAR areal models.

pub mod bootstrap;
pub mod covariance;
pub mod dagar;
pub mod dense;
pub mod error;
pub mod experiments;
pub mod factor;
pub mod geometry;
pub mod inference;
pub mod optim;
pub mod rfgls;
pub mod rng;

pub use covariance::{cross_covariance, kernel_value, CovarianceSpec, KernelFamily};
pub use error::{NngpError, Result};
pub use factor::{build_factor, FactorTarget, SparseCholesky};
pub use geometry::{
    build_neighbor_graph, order_locations, LocationSet, NeighborGraph, NeighborIndex, OrderingStrategy, Permutation,
    Point,
};
pub use inference::{fit_mle, predict, vecchia_loglik, FitResult, Prediction, RegressionData};
