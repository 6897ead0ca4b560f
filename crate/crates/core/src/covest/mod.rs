//! Location and scatter back ends: sample covariance, Minimum Covariance
//! Determinant and gamma-divergence estimation for the multivariate normal family.
//!
//! All back ends take the data as an `n x d` matrix with one observation per row.

mod gde;
mod mcd;
mod scm;

pub use gde::{gamma_objective, gde, GdeConfig, GdeInit};
pub use mcd::{c_step, consistency_factor, mcd, subset_size, McdConfig};
pub use scm::scm;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SCM")]
    Scm,
    #[serde(rename = "MCD")]
    Mcd,
    #[serde(rename = "GDE")]
    Gde,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Scm, Method::Mcd, Method::Gde];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scm => "SCM",
            Method::Mcd => "MCD",
            Method::Gde => "GDE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SCM" => Ok(Method::Scm),
            "MCD" => Ok(Method::Mcd),
            "GDE" => Ok(Method::Gde),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateMeta {
    Scm,
    Mcd {
        /// Selected observations, sorted ascending.
        subset: Vec<usize>,
        h: usize,
        consistency: f64,
        exhaustive: bool,
    },
    Gde {
        weights: Vec<f64>,
        iterations: usize,
        objective: f64,
        /// Objective after every update, starting with the initial value.
        objective_trace: Vec<f64>,
        converged: bool,
        restarted_from_mcd: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub method: Method,
    pub meta: EstimateMeta,
}

/// Mean and `1/(m-1)` covariance of the given rows.
pub(crate) fn subset_moments(data: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let d = data.ncols();
    let m = rows.len();
    let mut mean = DVector::zeros(d);
    for &r in rows {
        mean += data.row(r).transpose();
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    for &r in rows {
        let z = data.row(r).transpose() - &mean;
        cov.ger(1.0, &z, &z, 1.0);
    }
    if m > 1 {
        cov /= (m - 1) as f64;
    }
    (mean, cov)
}

/// Squared Cholesky pivots below this fraction of the largest variance count as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Gaussian with a factored scatter matrix.
pub(crate) struct Gaussian {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::SingularCovariance("scatter matrix is not positive definite".into())
        })?;
        let pivots = chol.l_dirty().diagonal();
        let log_det = 2.0 * pivots.iter().map(|v| v.ln()).sum::<f64>();
        let scale = cov.diagonal().amax();
        let smallest = pivots.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !log_det.is_finite() || smallest <= SINGULAR_PIVOT * scale {
            return Err(Error::SingularCovariance(
                "scatter matrix has zero determinant".into(),
            ));
        }
        Ok(Self {
            mean: mean.clone(),
            chol,
            log_det,
        })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Squared Mahalanobis distance of every row.
    pub fn mahalanobis_sq(&self, data: &DMatrix<f64>) -> Vec<f64> {
        let (n, d) = data.shape();
        let mut centered = DMatrix::zeros(d, n);
        for r in 0..n {
            centered.set_column(r, &(data.row(r).transpose() - &self.mean));
        }
        let l = self.chol.l();
        let solved = l
            .solve_lower_triangular(&centered)
            .expect("cholesky factor has a positive diagonal");
        solved.column_iter().map(|c| c.norm_squared()).collect()
    }

    pub fn log_density(&self, data: &DMatrix<f64>) -> Vec<f64> {
        let d = data.ncols() as f64;
        let constant = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det);
        self.mahalanobis_sq(data)
            .into_iter()
            .map(|m| constant - 0.5 * m)
            .collect()
    }
}

/// Standard normal data and a copy with its first 20% of rows replaced by
/// draws from `N(10 * 1, I)`.
#[cfg(test)]
pub(crate) fn remote_cluster_pair(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let clean = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let mut dirty = clean.clone();
    for r in 0..n / 5 {
        for c in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            dirty[(r, c)] = 10.0 + z;
        }
    }
    (clean, dirty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_of_standard_normal() {
        let g = Gaussian::new(&DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        let data = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let ld = g.log_density(&data);
        let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ld[0] - c).abs() < 1e-15);
        assert!((ld[1] - (c - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn singular_scatter_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Gaussian::new(&DVector::zeros(2), &cov).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("median".parse::<Method>().is_err());
    }
}
