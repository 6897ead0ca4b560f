use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{mcd, scm, CovEstimate, EstimateMeta, Gaussian, McdConfig, Method};
use crate::error::{Error, Result};
use crate::linalg;

/// Relative slack allowed before an objective increase counts as a descent failure.
const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GdeInit {
    #[serde(rename = "SCM")]
    Scm,
    #[serde(rename = "MCD")]
    Mcd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdeConfig {
    pub gamma: f64,
    /// Stop when the largest elementwise change of mean and scatter drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub init: GdeInit,
    /// Used for MCD initialization and for the fallback restart.
    pub mcd: McdConfig,
}

impl Default for GdeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            tol: 1e-8,
            max_iter: 500,
            init: GdeInit::Scm,
            mcd: McdConfig::default(),
        }
    }
}

/// Gamma-divergence between the empirical distribution of `data` and `N(mean, cov)`,
/// up to an additive constant:
///
/// `-(1/γ) log((1/n) Σ φ(x_i)^γ) + (1/(1+γ)) log ∫ φ^{1+γ}`, where
/// `∫ φ^{1+γ} = (1+γ)^{-d/2} (2π)^{-dγ/2} |Σ|^{-γ/2}`.
pub fn gamma_objective(
    data: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let g = Gaussian::new(mean, cov)?;
    Ok(objective_with(data, &g, gamma).0)
}

/// Returns the objective together with the log densities it was computed from.
fn objective_with(data: &DMatrix<f64>, g: &Gaussian, gamma: f64) -> (f64, Vec<f64>) {
    let n = data.nrows() as f64;
    let d = data.ncols() as f64;
    let log_phi = g.log_density(data);
    let scaled: Vec<f64> = log_phi.iter().map(|l| gamma * l).collect();
    let empirical = log_sum_exp(&scaled) - n.ln();
    let log_integral = -0.5 * d * (1.0 + gamma).ln()
        - 0.5 * d * gamma * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * gamma * g.log_det();
    (-empirical / gamma + log_integral / (1.0 + gamma), log_phi)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

/// Gamma-divergence estimate for the multivariate normal family.
///
/// Fixed-point iteration of the concave-convex procedure: with weights
/// `w_i ∝ φ(x_i; μ, Σ)^γ` summing to one,
/// `μ' = Σ w_i x_i` and `Σ' = (1+γ) Σ w_i (x_i - μ')(x_i - μ')^T`.
/// Each update does not increase [`gamma_objective`]. If a descent failure is
/// observed from an SCM start, the iteration is restarted once from MCD.
pub fn gde(data: &DMatrix<f64>, cfg: &GdeConfig) -> Result<CovEstimate> {
    check_gamma(cfg.gamma)?;
    let (n, d) = data.shape();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "GDE needs n > d, got n = {n}, d = {d}"
        )));
    }
    let first = iterate(data, cfg, cfg.init)?;
    if first.descended || cfg.init == GdeInit::Mcd {
        return Ok(first.into_estimate(false));
    }
    let second = iterate(data, cfg, GdeInit::Mcd)?;
    Ok(second.into_estimate(true))
}

struct Run {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    weights: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    descended: bool,
}

impl Run {
    fn into_estimate(self, restarted_from_mcd: bool) -> CovEstimate {
        CovEstimate {
            mean: self.mean,
            cov: self.cov,
            method: Method::Gde,
            meta: EstimateMeta::Gde {
                weights: self.weights,
                iterations: self.iterations,
                objective: *self.trace.last().expect("trace holds the initial value"),
                objective_trace: self.trace,
                converged: self.converged,
                restarted_from_mcd,
            },
        }
    }
}

fn iterate(data: &DMatrix<f64>, cfg: &GdeConfig, init: GdeInit) -> Result<Run> {
    let start = match init {
        GdeInit::Scm => scm(data)?,
        GdeInit::Mcd => mcd(data, &cfg.mcd)?,
    };
    let (n, d) = data.shape();
    let gamma = cfg.gamma;
    let mut mean = start.mean;
    let mut cov = start.cov;
    let mut g = Gaussian::new(&mean, &cov)?;
    let (mut objective, mut log_phi) = objective_with(data, &g, gamma);
    let mut trace = vec![objective];
    let mut weights = normalized_weights(&log_phi, gamma);
    let mut converged = false;
    let mut descended = true;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut next_mean = DVector::zeros(d);
        for (r, w) in weights.iter().enumerate() {
            next_mean += data.row(r).transpose() * *w;
        }
        let mut next_cov = DMatrix::zeros(d, d);
        for (r, w) in weights.iter().enumerate() {
            let z = data.row(r).transpose() - &next_mean;
            next_cov.ger(*w, &z, &z, 1.0);
        }
        next_cov = linalg::symmetrize(&(next_cov * (1.0 + gamma)));

        let change = (&next_mean - &mean).amax().max((&next_cov - &cov).amax());
        g = Gaussian::new(&next_mean, &next_cov).map_err(|_| {
            Error::SingularCovariance(format!(
                "GDE scatter became singular at iteration {iterations}"
            ))
        })?;
        let (next_objective, next_log_phi) = objective_with(data, &g, gamma);
        if next_objective > objective + DESCENT_SLACK * (1.0 + objective.abs()) {
            descended = false;
        }
        mean = next_mean;
        cov = next_cov;
        objective = next_objective;
        log_phi = next_log_phi;
        weights = normalized_weights(&log_phi, gamma);
        trace.push(objective);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    debug_assert_eq!(weights.len(), n);
    Ok(Run {
        mean,
        cov,
        weights,
        trace,
        iterations,
        converged,
        descended,
    })
}

fn normalized_weights(log_phi: &[f64], gamma: f64) -> Vec<f64> {
    let scaled: Vec<f64> = log_phi.iter().map(|l| gamma * l).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, max_abs_diff};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn meta(est: &CovEstimate) -> (&[f64], bool) {
        match &est.meta {
            EstimateMeta::Gde {
                objective_trace,
                converged,
                ..
            } => (objective_trace, *converged),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_objective_example() {
        let data = DMatrix::from_element(1, 1, 0.0);
        let got =
            gamma_objective(&data, &DVector::zeros(1), &DMatrix::identity(1, 1), 1.0).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        let log_phi0 = -0.5 * two_pi.ln();
        let expected = -log_phi0 + 0.5 * (2f64.powf(-0.5) * two_pi.powf(-0.5)).ln();
        assert!((got - expected).abs() < 1e-14);
    }

    /// Trapezoidal quadrature of `∫ φ^{1+γ}` on a wide grid.
    fn quadrature_integral(mu: f64, var: f64, gamma: f64) -> f64 {
        let sd = var.sqrt();
        let (lo, hi, steps) = (mu - 40.0 * sd, mu + 40.0 * sd, 400_000);
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| {
            let phi =
                (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            phi.powf(1.0 + gamma)
        };
        let mut acc = 0.5 * (f(lo) + f(hi));
        for k in 1..steps {
            acc += f(lo + k as f64 * h);
        }
        acc * h
    }

    #[test]
    fn objective_matches_quadrature() {
        let gamma = 0.3;
        let data = normal_data(50, 1, 8);
        let (mu, var) = (0.2, 1.7);
        let got = gamma_objective(
            &data,
            &DVector::from_element(1, mu),
            &DMatrix::from_element(1, 1, var),
            gamma,
        )
        .unwrap();
        let empirical: f64 = data
            .iter()
            .map(|&x| {
                let phi = (-(x - mu).powi(2) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt();
                phi.powf(gamma)
            })
            .sum::<f64>()
            / 50.0;
        let oracle =
            -empirical.ln() / gamma + quadrature_integral(mu, var, gamma).ln() / (1.0 + gamma);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn duplicating_the_mode_lowers_the_first_term() {
        let data = normal_data(30, 2, 1);
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let mut extended = DMatrix::zeros(35, 2);
        extended.rows_mut(0, 30).copy_from(&data);
        let before = gamma_objective(&data, &mean, &cov, 0.3).unwrap();
        let after = gamma_objective(&extended, &mean, &cov, 0.3).unwrap();
        assert!(after < before);
    }

    #[test]
    fn objective_rejects_singular_scatter() {
        let data = normal_data(5, 2, 1);
        assert!(gamma_objective(&data, &DVector::zeros(2), &DMatrix::zeros(2, 2), 0.3).is_err());
    }

    #[test]
    fn vanishing_gamma_recovers_maximum_likelihood() {
        let data = normal_data(5000, 3, 2);
        let cfg = GdeConfig {
            gamma: 1e-6,
            ..GdeConfig::default()
        };
        let est = gde(&data, &cfg).unwrap();
        let reference = scm(&data).unwrap();
        let mle = &reference.cov * (4999.0 / 5000.0);
        assert!((&est.mean - &reference.mean).amax() < 1e-3);
        assert!(max_abs_diff(&est.cov, &mle) < 1e-3);
        // The 1/(n-1) versus 1/n gap is below the tolerance at this n.
        assert!(max_abs_diff(&est.cov, &reference.cov) < 1e-3);
    }

    #[test]
    fn resists_gross_outliers_in_one_dimension() {
        let mut data = normal_data(100, 1, 5);
        for r in 95..100 {
            data[(r, 0)] = 50.0;
        }
        let est = gde(&data, &GdeConfig::default()).unwrap();
        let reference = scm(&data).unwrap();
        assert!(est.mean[0].abs() < 0.5, "{}", est.mean[0]);
        assert!(reference.mean[0] > 2.0);
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        for seed in 0..10 {
            let mut data = normal_data(120, 3, 60 + seed);
            for r in 0..15 {
                for c in 0..3 {
                    data[(r, c)] += 8.0;
                }
            }
            let est = gde(&data, &GdeConfig::default()).unwrap();
            let (trace, converged) = meta(&est);
            assert!(converged);
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()),
                    "seed {seed}: {w:?}"
                );
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let est = gde(&normal_data(40, 2, 9), &GdeConfig::default()).unwrap();
        match est.meta {
            EstimateMeta::Gde { weights, .. } => {
                assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn robust_to_remote_cluster() {
        let (clean, dirty) = crate::covest::remote_cluster_pair(200, 5, 42);
        let cfg = GdeConfig::default();
        let a = gde(&clean, &cfg).unwrap().cov;
        let b = gde(&dirty, &cfg).unwrap().cov;
        assert!(frobenius(&(a - b)) < 0.5);
        let shift = scm(&clean).unwrap().cov - scm(&dirty).unwrap().cov;
        assert!(frobenius(&shift) > 5.0);
    }

    #[test]
    fn rejects_non_positive_gamma() {
        let cfg = GdeConfig {
            gamma: 0.0,
            ..GdeConfig::default()
        };
        assert!(gde(&normal_data(10, 1, 0), &cfg).is_err());
    }
}
