//! The LLC estimator.
//!
//! In experiment `k` the covariance between an intervened `x_i` and an observed
//! `x_u` is the total effect `t(x_i ~> x_u || J_k)`. Total effects satisfy
//!
//! ```text
//! t(i ~> u || J_k) = b_ui + Σ_{u' ∈ U_k \ {u}} t(i ~> u' || J_k) b_uu'
//! ```
//!
//! which is linear in the direct effects of row `u` of `B`. Stacking these
//! constraints over all experiments gives a block-diagonal system `t = T b`,
//! one block per target node `u`. The disturbance covariance then follows from
//! the observational covariance as `(I - B) C_0 (I - B)^T`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covest::{gde, mcd, scm, CovEstimate, GdeConfig, McdConfig, Method};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{first_uncovered_pair, row_major, Experiment, ExperimentDesign};
use crate::simulate::Sample;

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Blocks whose condition number exceeds this raise the singularity flag.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalEffect {
    /// Observed node.
    pub observed: usize,
    /// Intervened node.
    pub intervened: usize,
    /// Index of the experiment within its design.
    pub experiment: usize,
    pub value: f64,
}

/// Reads the `(u, i)` entries, `u ∈ U_k`, `i ∈ J_k`, off an experiment's covariance.
/// Empty for the observational experiment.
pub fn extract_total_effects(cov: &DMatrix<f64>, exp: &Experiment, k: usize) -> Vec<TotalEffect> {
    exp.intervened()
        .iter()
        .flat_map(|&i| {
            exp.observed().iter().map(move |&u| TotalEffect {
                observed: u,
                intervened: i,
                experiment: k,
                value: cov[(u, i)],
            })
        })
        .collect()
}

/// Column of `b_uj` (`j != u`) in the flattened, diagonal-free, row-major `B`.
pub fn column_of(d: usize, u: usize, j: usize) -> usize {
    debug_assert!(u != j);
    u * (d - 1) + if j < u { j } else { j - 1 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub d: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Column -> `(u, j)` of `b_uj`.
    pub columns: Vec<(usize, usize)>,
    /// Row -> `(u, i, k)` of the total effect it encodes.
    pub rows: Vec<(usize, usize, usize)>,
}

impl ConstraintSystem {
    /// Row indices belonging to the block of target node `u`.
    pub fn block_rows(&self, u: usize) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.0 == u)
            .map(|(idx, _)| idx)
            .collect()
    }

    pub fn block_columns(&self, u: usize) -> std::ops::Range<usize> {
        u * (self.d - 1)..(u + 1) * (self.d - 1)
    }

    pub fn block(&self, u: usize) -> (DMatrix<f64>, DVector<f64>) {
        let rows = self.block_rows(u);
        let cols: Vec<usize> = self.block_columns(u).collect();
        let m = linalg::submatrix(&self.matrix, &rows, &cols);
        let t = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.rhs[r]));
        (m, t)
    }
}

/// Builds one constraint per total effect, rows grouped by target node.
pub fn assemble_constraints(
    effects: &[TotalEffect],
    design: &ExperimentDesign,
    d: usize,
) -> Result<ConstraintSystem> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("d must be >= 2, got {d}")));
    }
    let mut lookup: HashMap<(usize, usize, usize), f64> = HashMap::with_capacity(effects.len());
    for e in effects {
        let exp = design.experiments.get(e.experiment).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "effect refers to unknown experiment {}",
                e.experiment
            ))
        })?;
        if e.observed >= d || !exp.is_intervened(e.intervened) || exp.is_intervened(e.observed) {
            return Err(Error::InvalidArgument(format!(
                "effect t(x{} -> x{}) does not match experiment {exp}",
                e.intervened + 1,
                e.observed + 1
            )));
        }
        lookup.insert((e.experiment, e.intervened, e.observed), e.value);
    }

    let mut ordered: Vec<&TotalEffect> = effects.iter().collect();
    ordered.sort_by_key(|e| (e.observed, e.experiment, e.intervened));

    let ncols = d * (d - 1);
    let mut matrix = DMatrix::zeros(ordered.len(), ncols);
    let mut rhs = DVector::zeros(ordered.len());
    let mut rows = Vec::with_capacity(ordered.len());
    for (r, e) in ordered.iter().enumerate() {
        let (u, i, k) = (e.observed, e.intervened, e.experiment);
        rhs[r] = e.value;
        matrix[(r, column_of(d, u, i))] = 1.0;
        for &other in design.experiments[k].observed() {
            if other == u {
                continue;
            }
            let t = lookup.get(&(k, i, other)).ok_or(Error::MissingEffect {
                intervened: i + 1,
                observed: other + 1,
                experiment: k,
            })?;
            matrix[(r, column_of(d, u, other))] = *t;
        }
        rows.push((u, i, k));
    }
    let columns = (0..d)
        .flat_map(|u| (0..d).filter(move |&j| j != u).map(move |j| (u, j)))
        .collect();
    Ok(ConstraintSystem {
        d,
        matrix,
        rhs,
        columns,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    Pseudoinverse,
    Ridge { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub solver: Solver,
    /// Numerical rank of each block; full rank is `d - 1`.
    pub block_ranks: Vec<usize>,
    pub rank_deficient: bool,
    /// `||T b - t||_2`.
    pub residual_norm: f64,
}

/// Solves `t = T b` block by block: pseudoinverse for `lambda = 0`, ridge otherwise.
/// Returns `B̂` with a zero diagonal.
pub fn solve_b(system: &ConstraintSystem, lambda: f64) -> Result<(DMatrix<f64>, SolveDiagnostics)> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge parameter must be non-negative, got {lambda}"
        )));
    }
    let d = system.d;
    let mut b_flat = DVector::zeros(d * (d - 1));
    let mut block_ranks = Vec::with_capacity(d);
    for u in 0..d {
        let (m, t) = system.block(u);
        let cols = system.block_columns(u);
        let solution = if lambda == 0.0 {
            let (pinv, rank) = linalg::pseudo_inverse(&m, PINV_CUTOFF);
            block_ranks.push(rank);
            pinv * t
        } else {
            let (_, rank) = linalg::pseudo_inverse(&m, PINV_CUTOFF);
            block_ranks.push(rank);
            let gram = m.transpose() * &m + DMatrix::identity(d - 1, d - 1) * lambda;
            let chol = gram.cholesky().ok_or_else(|| {
                Error::SingularCovariance("ridge normal equations are not positive definite".into())
            })?;
            chol.solve(&(m.transpose() * t))
        };
        b_flat.rows_mut(cols.start, d - 1).copy_from(&solution);
    }
    let residual_norm = (&system.matrix * &b_flat - &system.rhs).norm();
    let mut b = DMatrix::zeros(d, d);
    for (c, &(u, j)) in system.columns.iter().enumerate() {
        b[(u, j)] = b_flat[c];
    }
    let rank_deficient = block_ranks.iter().any(|&r| r < d - 1);
    Ok((
        b,
        SolveDiagnostics {
            solver: if lambda == 0.0 {
                Solver::Pseudoinverse
            } else {
                Solver::Ridge { lambda }
            },
            block_ranks,
            rank_deficient,
            residual_norm,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Condition number of each target-node block; infinite when the block is
    /// rank deficient or has fewer rows than unknowns.
    pub block_conditions: Vec<f64>,
    pub singular: bool,
}

pub fn condition_diagnostics(system: &ConstraintSystem) -> ConditionReport {
    let block_conditions: Vec<f64> = (0..system.d)
        .map(|u| {
            let (m, _) = system.block(u);
            if m.nrows() < m.ncols() {
                f64::INFINITY
            } else {
                linalg::condition_number(&m)
            }
        })
        .collect();
    let singular = block_conditions
        .iter()
        .any(|&c| c.is_nan() || c > CONDITION_LIMIT);
    ConditionReport {
        block_conditions,
        singular,
    }
}

/// `(I - B̂) C_0 (I - B̂)^T`, symmetrized.
pub fn estimate_sigma_e(b_hat: &DMatrix<f64>, cov0: &DMatrix<f64>) -> DMatrix<f64> {
    let d = b_hat.nrows();
    let a = DMatrix::identity(d, d) - b_hat;
    linalg::symmetrize(&(&a * cov0 * a.transpose()))
}

/// Covariance back end used for every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum Backend {
    #[serde(rename = "SCM")]
    Scm,
    #[serde(rename = "MCD")]
    Mcd(McdConfig),
    #[serde(rename = "GDE")]
    Gde(GdeConfig),
}

impl Backend {
    pub fn method(&self) -> Method {
        match self {
            Backend::Scm => Method::Scm,
            Backend::Mcd(_) => Method::Mcd,
            Backend::Gde(_) => Method::Gde,
        }
    }

    pub fn estimate(&self, data: &DMatrix<f64>) -> Result<CovEstimate> {
        match self {
            Backend::Scm => scm(data),
            Backend::Mcd(cfg) => mcd(data, cfg),
            Backend::Gde(cfg) => gde(data, cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcDiagnostics {
    pub solve: SolveDiagnostics,
    pub conditioning: ConditionReport,
    pub backend: Option<Method>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlcEstimate {
    pub b_hat: DMatrix<f64>,
    pub sigma_e_hat: DMatrix<f64>,
    pub diagnostics: LlcDiagnostics,
}

/// On-disk form: the model document plus a `diagnostics` object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub d: usize,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "SigmaE")]
    pub sigma_e: Vec<f64>,
    pub diagnostics: LlcDiagnostics,
}

impl LlcEstimate {
    pub fn document(&self) -> EstimateDocument {
        EstimateDocument {
            d: self.b_hat.nrows(),
            b: row_major(&self.b_hat),
            sigma_e: row_major(&self.sigma_e_hat),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

fn check_design(design: &ExperimentDesign, d: usize) -> Result<usize> {
    if design.experiments.iter().any(|e| e.d() != d) {
        return Err(Error::Dimension("design and data disagree on d".into()));
    }
    let obs = design
        .observational_index()
        .ok_or(Error::MissingObservational)?;
    if let Some((i, u)) = first_uncovered_pair(design, d) {
        return Err(Error::PairCondition {
            intervened: i + 1,
            observed: u + 1,
        });
    }
    Ok(obs)
}

/// LLC from per-experiment covariance matrices, in design order.
pub fn llc_from_covariances(
    covs: &[DMatrix<f64>],
    design: &ExperimentDesign,
    lambda: f64,
) -> Result<LlcEstimate> {
    if covs.len() != design.len() {
        return Err(Error::Dimension(format!(
            "{} covariances for {} experiments",
            covs.len(),
            design.len()
        )));
    }
    let d = covs.first().map(|c| c.nrows()).unwrap_or(0);
    if d < 2 || covs.iter().any(|c| c.shape() != (d, d)) {
        return Err(Error::Dimension(
            "covariances must all be d x d with d >= 2".into(),
        ));
    }
    let obs = check_design(design, d)?;
    let effects: Vec<TotalEffect> = design
        .experiments
        .iter()
        .enumerate()
        .flat_map(|(k, exp)| extract_total_effects(&covs[k], exp, k))
        .collect();
    let system = assemble_constraints(&effects, design, d)?;
    let (b_hat, solve) = solve_b(&system, lambda)?;
    let sigma_e_hat = estimate_sigma_e(&b_hat, &covs[obs]);
    Ok(LlcEstimate {
        b_hat,
        sigma_e_hat,
        diagnostics: LlcDiagnostics {
            solve,
            conditioning: condition_diagnostics(&system),
            backend: None,
        },
    })
}

/// Full LLC pipeline: back-end covariance per experiment, total effects,
/// constraint solve, disturbance covariance.
pub fn llc_fit(
    samples: &[Sample],
    design: &ExperimentDesign,
    backend: &Backend,
    lambda: f64,
) -> Result<LlcEstimate> {
    if samples.len() != design.len() {
        return Err(Error::Dimension(format!(
            "{} samples for {} experiments",
            samples.len(),
            design.len()
        )));
    }
    for (k, (s, e)) in samples.iter().zip(&design.experiments).enumerate() {
        if &s.experiment != e {
            return Err(Error::InvalidArgument(format!(
                "sample {k} was drawn under {} but the design lists {e}",
                s.experiment
            )));
        }
    }
    let d = samples.first().map(|s| s.d()).unwrap_or(0);
    check_design(design, d)?;
    let covs = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            backend
                .estimate(&s.data)
                .map(|est| est.cov)
                .map_err(|source| Error::Backend {
                    experiment: k,
                    source: Box::new(source),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut estimate = llc_from_covariances(&covs, design, lambda)?;
    estimate.diagnostics.backend = Some(backend.method());
    Ok(estimate)
}
