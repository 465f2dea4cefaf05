//! Stationary isotropic covariance kernels.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NngpError, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Exponential,
    Matern32,
    Gaussian,
}

impl KernelFamily {
    /// Correlation at distance `d` for decay `phi`.
    #[inline]
    pub fn correlation(self, phi: f64, d: f64) -> f64 {
        let t = phi * d;
        match self {
            KernelFamily::Exponential => (-t).exp(),
            KernelFamily::Matern32 => (1.0 + t) * (-t).exp(),
            KernelFamily::Gaussian => (-t * t).exp(),
        }
    }

    /// The scaled distance `phi * d` at which the correlation drops to 0.05.
    pub fn effective_range_factor(self) -> f64 {
        match self {
            KernelFamily::Exponential => -(0.05f64.ln()),
            // root of (1 + t) e^{-t} = 0.05
            KernelFamily::Matern32 => 4.743_864_518_390_577,
            KernelFamily::Gaussian => (-(0.05f64.ln())).sqrt(),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Gaussian => "gaussian",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = NngpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(KernelFamily::Exponential),
            "matern32" | "matern-3/2" | "matern3/2" => Ok(KernelFamily::Matern32),
            "gaussian" | "squared-exponential" => Ok(KernelFamily::Gaussian),
            other => Err(NngpError::InvalidParameter(format!(
                "unknown kernel family '{other}' (expected exponential, matern32 or gaussian)"
            ))),
        }
    }
}

/// Kernel family with marginal variance `sigma2`, decay `phi` and nugget `tau2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl CovarianceSpec {
    pub fn new(family: KernelFamily, sigma2: f64, phi: f64, tau2: f64) -> Result<Self> {
        let spec = Self {
            family,
            sigma2,
            phi,
            tau2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(NngpError::InvalidParameter(format!(
                "sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(NngpError::InvalidParameter(format!(
                "phi must be > 0, got {}",
                self.phi
            )));
        }
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(NngpError::InvalidParameter(format!(
                "tau2 must be >= 0, got {}",
                self.tau2
            )));
        }
        Ok(())
    }

    /// Covariance at distance `d`; the nugget is added only at `d == 0`.
    #[inline]
    pub fn kernel_value(&self, d: f64, include_nugget: bool) -> f64 {
        let c = self.sigma2 * self.family.correlation(self.phi, d);
        if include_nugget && d == 0.0 {
            c + self.tau2
        } else {
            c
        }
    }

    /// Covariance between two points; the nugget applies only to identical points.
    #[inline]
    pub fn between(&self, a: &Point, b: &Point, include_nugget: bool) -> f64 {
        self.kernel_value(a.dist(b), include_nugget)
    }

    /// Variance at a single site.
    pub fn total_variance(&self, include_nugget: bool) -> f64 {
        if include_nugget {
            self.sigma2 + self.tau2
        } else {
            self.sigma2
        }
    }
}

pub fn kernel_value(spec: &CovarianceSpec, d: f64, include_nugget: bool) -> f64 {
    spec.kernel_value(d, include_nugget)
}

pub fn cross_covariance(spec: &CovarianceSpec, a: &[Point], b: &[Point], include_nugget: bool) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| spec.between(&a[i], &b[j], include_nugget))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: KernelFamily, sigma2: f64, phi: f64, tau2: f64) -> CovarianceSpec {
        CovarianceSpec::new(family, sigma2, phi, tau2).unwrap()
    }

    #[test]
    fn exponential_values() {
        let s = spec(KernelFamily::Exponential, 1.0, 1.0, 0.0);
        assert_eq!(s.kernel_value(0.0, false), 1.0);
        let s = spec(KernelFamily::Exponential, 2.0, 0.5, 0.0);
        assert!((s.kernel_value(2.0, false) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn decay_limits() {
        for family in [
            KernelFamily::Exponential,
            KernelFamily::Matern32,
            KernelFamily::Gaussian,
        ] {
            let s = spec(family, 1.0, 1.0, 0.3);
            assert!(s.kernel_value(1e3, true) < 1e-300);
            let mut prev = f64::INFINITY;
            for k in 0..200 {
                let v = s.kernel_value(k as f64 * 0.05, false);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn effective_range_factor_gives_five_percent() {
        for family in [
            KernelFamily::Exponential,
            KernelFamily::Matern32,
            KernelFamily::Gaussian,
        ] {
            let t = family.effective_range_factor();
            assert!((family.correlation(1.0, t) - 0.05).abs() < 1e-9, "{family}");
        }
    }

    #[test]
    fn nugget_only_on_identical_points() {
        let s = spec(KernelFamily::Exponential, 1.0, 2.0, 0.1);
        let p = [Point::new(0.2, 0.2)];
        let c = cross_covariance(&s, &p, &p, true);
        assert!((c[(0, 0)] - 1.1).abs() < 1e-15);
        let q = [Point::new(0.2, 0.2), Point::new(0.5, 0.6)];
        let c = cross_covariance(&s, &q, &q, true);
        let off = (-2.0 * 0.5f64).exp();
        assert!((c[(0, 1)] - off).abs() < 1e-15);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
        assert!((c[(1, 1)] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(CovarianceSpec::new(KernelFamily::Exponential, 0.0, 1.0, 0.0).is_err());
        assert!(CovarianceSpec::new(KernelFamily::Exponential, 1.0, -1.0, 0.0).is_err());
        assert!(CovarianceSpec::new(KernelFamily::Exponential, 1.0, 1.0, -0.1).is_err());
        assert!("bessel".parse::<KernelFamily>().is_err());
        assert_eq!("Matern32".parse::<KernelFamily>().unwrap(), KernelFamily::Matern32);
    }
}
