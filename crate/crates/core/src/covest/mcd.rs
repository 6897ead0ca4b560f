use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{subset_moments, CovEstimate, EstimateMeta, Gaussian, Method};
use crate::error::{Error, Result};

/// Instances with at most this many `h`-subsets are searched exhaustively.
const EXHAUSTIVE_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    /// `h / n`, restricted to `[0.5, 1]`.
    pub alpha: f64,
    /// Random elemental starts.
    pub n_starts: usize,
    pub max_csteps: usize,
    /// Starts kept for refinement to convergence.
    pub n_best: usize,
    pub seed: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_starts: 50,
            max_csteps: 30,
            n_best: 10,
            seed: 0,
        }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "MCD alpha must lie in [0.5, 1], got {}",
                self.alpha
            )));
        }
        if self.n_starts == 0 || self.n_best == 0 {
            return Err(Error::InvalidArgument(
                "MCD needs at least one start".into(),
            ));
        }
        Ok(())
    }
}

/// Subset size: `floor((n + d + 1) / 2)` at `alpha = 0.5`, else `ceil(alpha * n)`.
pub fn subset_size(n: usize, d: usize, alpha: f64) -> usize {
    if alpha == 0.5 {
        (n + d).div_ceil(2)
    } else {
        ((alpha * n as f64) - 1e-9).ceil().min(n as f64) as usize
    }
}

/// Gaussian consistency factor `(h/n) / P(chi2_{d+2} <= q)`, `q` the `h/n` quantile of `chi2_d`.
/// Exactly 1 when `h = n`.
pub fn consistency_factor(h: usize, n: usize, d: usize) -> f64 {
    if h >= n {
        return 1.0;
    }
    let frac = h as f64 / n as f64;
    let chi_d = ChiSquared::new(d as f64).expect("d > 0");
    let chi_d2 = ChiSquared::new(d as f64 + 2.0).expect("d > 0");
    let q = chi_d.inverse_cdf(frac);
    frac / chi_d2.cdf(q)
}

/// Minimum Covariance Determinant estimate of location and scatter.
pub fn mcd(data: &DMatrix<f64>, cfg: &McdConfig) -> Result<CovEstimate> {
    cfg.validate()?;
    let (n, d) = data.shape();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "MCD needs n > d, got n = {n}, d = {d}"
        )));
    }
    let h = subset_size(n, d, cfg.alpha);
    if h <= d {
        return Err(Error::InvalidArgument(format!(
            "MCD subset size h = {h} must exceed d = {d}"
        )));
    }

    let exhaustive = binomial_at_most(n, h, EXHAUSTIVE_LIMIT);
    let best = if exhaustive {
        exhaustive_search(data, h)
    } else {
        fast_search(data, h, cfg)
    };
    let Some((_, subset)) = best else {
        return Err(Error::DegenerateData(
            "every candidate subset has a singular covariance".into(),
        ));
    };

    let (mean, raw) = subset_moments(data, &subset);
    let consistency = consistency_factor(h, n, d);
    let cov = if consistency == 1.0 {
        raw
    } else {
        raw * consistency
    };
    Ok(CovEstimate {
        mean,
        cov,
        method: Method::Mcd,
        meta: EstimateMeta::Mcd {
            subset,
            h,
            consistency,
            exhaustive,
        },
    })
}

/// One concentration step: the `|subset|` observations closest to the subset's
/// mean in the subset's Mahalanobis metric, returned sorted.
pub fn c_step(data: &DMatrix<f64>, subset: &[usize]) -> Result<Vec<usize>> {
    let (mean, cov) = subset_moments(data, subset);
    let g = Gaussian::new(&mean, &cov)?;
    Ok(closest(data, &g, subset.len()))
}

fn closest(data: &DMatrix<f64>, g: &Gaussian, h: usize) -> Vec<usize> {
    let dist = g.mahalanobis_sq(data);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let mut picked = order[..h].to_vec();
    picked.sort_unstable();
    picked
}

fn log_det_of(data: &DMatrix<f64>, subset: &[usize]) -> Option<f64> {
    let (mean, cov) = subset_moments(data, subset);
    Gaussian::new(&mean, &cov).ok().map(|g| g.log_det())
}

fn binomial_at_most(n: usize, k: usize, limit: u64) -> bool {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > limit as u128 {
            return false;
        }
    }
    true
}

fn exhaustive_search(data: &DMatrix<f64>, h: usize) -> Option<(f64, Vec<usize>)> {
    let n = data.nrows();
    let mut idx: Vec<usize> = (0..h).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Some(ld) = log_det_of(data, &idx) {
            if best.as_ref().is_none_or(|(b, _)| ld < *b) {
                best = Some((ld, idx.clone()));
            }
        }
        // Next combination in lexicographic order.
        let mut i = h;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - h + i {
                break;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..h {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Random elemental starts, two C-steps each, then the best few refined to convergence.
fn fast_search(data: &DMatrix<f64>, h: usize, cfg: &McdConfig) -> Option<(f64, Vec<usize>)> {
    let d = data.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::with_capacity(cfg.n_starts);
    for _ in 0..cfg.n_starts {
        let Some(start) = elemental_start(data, d, &mut rng) else {
            continue;
        };
        let mut subset = closest(data, &start, h);
        for _ in 0..2 {
            match c_step(data, &subset) {
                Ok(next) => subset = next,
                Err(_) => break,
            }
        }
        if let Some(ld) = log_det_of(data, &subset) {
            candidates.push((ld, subset));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.dedup_by(|a, b| a.1 == b.1);
    candidates.truncate(cfg.n_best);

    let mut best: Option<(f64, Vec<usize>)> = None;
    for (mut ld, mut subset) in candidates {
        for _ in 0..cfg.max_csteps {
            let Ok(next) = c_step(data, &subset) else {
                break;
            };
            if next == subset {
                break;
            }
            let Some(next_ld) = log_det_of(data, &next) else {
                break;
            };
            if next_ld >= ld {
                break;
            }
            ld = next_ld;
            subset = next;
        }
        if best.as_ref().is_none_or(|(b, _)| ld < *b) {
            best = Some((ld, subset));
        }
    }
    best
}

/// A random `(d+1)`-subset, grown one random point at a time until its covariance is nonsingular.
fn elemental_start<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    d: usize,
    rng: &mut R,
) -> Option<Gaussian> {
    let n = data.nrows();
    let mut order = index::sample(rng, n, n).into_vec();
    let mut size = (d + 1).min(n);
    loop {
        let subset = &mut order[..size];
        let (mean, cov) = subset_moments(data, subset);
        if let Ok(g) = Gaussian::new(&mean, &cov) {
            return Some(g);
        }
        if size == n {
            return None;
        }
        size += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covest::scm;
    use crate::linalg::frobenius;
    use rand_distr::{Distribution, StandardNormal};

    fn outlier_line() -> DMatrix<f64> {
        DMatrix::from_column_slice(8, 1, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1000.0])
    }

    fn gaussian_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn subset_size_rules() {
        assert_eq!(subset_size(100, 5, 0.5), 53);
        assert_eq!(subset_size(200, 5, 0.5), 103);
        assert_eq!(subset_size(100, 5, 0.75), 75);
        assert_eq!(subset_size(10, 2, 1.0), 10);
    }

    #[test]
    fn consistency_factor_is_one_for_full_subset() {
        assert_eq!(consistency_factor(10, 10, 3), 1.0);
        // Reference values from scipy.stats.chi2.
        assert!((consistency_factor(50, 100, 1) - 7.010074539703252).abs() < 1e-9);
        assert!((consistency_factor(103, 200, 5) - 1.874790594490307).abs() < 1e-9);
    }

    #[test]
    fn alpha_one_equals_scm() {
        for (n, d) in [(12, 2), (200, 5)] {
            let data = gaussian_data(n, d, 3);
            let cfg = McdConfig {
                alpha: 1.0,
                ..McdConfig::default()
            };
            let est = mcd(&data, &cfg).unwrap();
            let reference = scm(&data).unwrap();
            assert_eq!(est.cov, reference.cov);
            assert_eq!(est.mean, reference.mean);
        }
    }

    #[test]
    fn exhaustive_search_drops_outlier() {
        let data = outlier_line();
        let cfg = McdConfig {
            alpha: 0.5,
            ..McdConfig::default()
        };
        let est = mcd(&data, &cfg).unwrap();
        match est.meta {
            EstimateMeta::Mcd {
                subset,
                h,
                exhaustive,
                ..
            } => {
                assert_eq!(h, 5);
                assert!(exhaustive);
                assert!(!subset.contains(&7));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn four_point_subset_excludes_outlier() {
        // h = 4 corresponds to alpha = 0.5 under ceil(alpha * n).
        let data = outlier_line();
        let best = exhaustive_search(&data, 4).unwrap();
        assert!(!best.1.contains(&7));
        let spread = (0.3f64 - 0.0).powi(2);
        assert!(best.0 < spread.ln());
    }

    #[test]
    fn c_step_discards_outlier() {
        let data = outlier_line();
        let mut subset = vec![0, 1, 2, 7];
        for _ in 0..8 {
            subset = c_step(&data, &subset).unwrap();
        }
        assert!(!subset.contains(&7));
    }

    #[test]
    fn c_step_fixed_point_at_optimum() {
        let data = outlier_line();
        let (ld, best) = exhaustive_search(&data, 4).unwrap();
        let next = c_step(&data, &best).unwrap();
        let next_ld = log_det_of(&data, &next).unwrap();
        assert!((next_ld - ld).abs() < 1e-12);
    }

    #[test]
    fn c_step_never_increases_determinant() {
        for seed in 0..20 {
            let data = gaussian_data(40, 3, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut subset = index::sample(&mut rng, 40, 22).into_vec();
            subset.sort_unstable();
            let mut ld = log_det_of(&data, &subset).unwrap();
            for _ in 0..10 {
                subset = c_step(&data, &subset).unwrap();
                let next = log_det_of(&data, &subset).unwrap();
                assert!(next <= ld + 1e-12, "seed {seed}: {next} > {ld}");
                ld = next;
            }
        }
    }

    #[test]
    fn c_step_rejects_singular_subset() {
        let data = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            c_step(&data, &[0, 1, 2]),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn degenerate_data_is_signalled() {
        let data = DMatrix::from_fn(10, 2, |r, _| r as f64);
        assert!(matches!(
            mcd(&data, &McdConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn fast_search_matches_exhaustive_on_small_instances() {
        for seed in 0..10 {
            let mut data = gaussian_data(16, 2, 500 + seed);
            for r in 0..3 {
                data[(r, 0)] += 6.0;
                data[(r, 1)] -= 4.0;
            }
            let h = subset_size(16, 2, 0.5);
            let (exact, _) = exhaustive_search(&data, h).unwrap();
            let cfg = McdConfig {
                seed,
                ..McdConfig::default()
            };
            let (fast, _) = fast_search(&data, h, &cfg).unwrap();
            assert!(fast.exp() <= (1.0 + 1e-9) * exact.exp(), "seed {seed}");
        }
    }

    #[test]
    fn robust_to_remote_cluster() {
        let (clean, dirty) = crate::covest::remote_cluster_pair(2000, 5, 42);
        let cfg = McdConfig::default();
        let a = mcd(&clean, &cfg).unwrap().cov;
        let b = mcd(&dirty, &cfg).unwrap().cov;
        assert!(frobenius(&(a - b)) < 0.5);
    }

    #[test]
    fn rejects_bad_alpha() {
        let data = gaussian_data(20, 2, 0);
        let cfg = McdConfig {
            alpha: 0.3,
            ..McdConfig::default()
        };
        assert!(mcd(&data, &cfg).is_err());
    }
}
