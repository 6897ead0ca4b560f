//! Linear cyclic causal models `x = B x + e` with correlated disturbances,
//! perfect-intervention experiments, random model generation and exact
//! population-level quantities.
//!
//! Node indices are 0-based in the API and 1-based in every serialized form.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue tolerance used when checking positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    /// Direct effects; `b[(i, j)]` is the effect of `x_j` on `x_i`.
    pub b: DMatrix<f64>,
    /// Covariance of the disturbances. Off-diagonal entries are hidden confounders.
    pub sigma_e: DMatrix<f64>,
}

impl CausalModel {
    pub fn new(b: DMatrix<f64>, sigma_e: DMatrix<f64>) -> Result<Self> {
        if !b.is_square() || b.shape() != sigma_e.shape() || b.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "B is {:?}, SigmaE is {:?}; both must be d x d with d > 0",
                b.shape(),
                sigma_e.shape()
            )));
        }
        Ok(Self { b, sigma_e })
    }

    pub fn d(&self) -> usize {
        self.b.nrows()
    }

    pub fn edge_count(&self) -> usize {
        let d = self.d();
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.b[(i, j)] != 0.0)
            .count()
    }

    /// `I - U B` for the given experiment.
    pub fn system_matrix(&self, exp: &Experiment) -> DMatrix<f64> {
        let d = self.d();
        let u = linalg::diag_selector(d, exp.observed());
        DMatrix::identity(d, d) - u * &self.b
    }

    /// `(I - U B)^{-1}`, or an error when the experiment is not weakly stable.
    pub fn reduced_form(&self, exp: &Experiment) -> Result<DMatrix<f64>> {
        let m = self.system_matrix(exp);
        if !linalg::is_invertible(&m) {
            return Err(Error::NotWeaklyStable {
                experiment: exp.to_string(),
            });
        }
        m.try_inverse().ok_or_else(|| Error::NotWeaklyStable {
            experiment: exp.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// On-disk form: `{"d": int, "B": [row-major d*d], "SigmaE": [row-major d*d]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub d: usize,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "SigmaE")]
    pub sigma_e: Vec<f64>,
}

impl From<&CausalModel> for ModelDocument {
    fn from(m: &CausalModel) -> Self {
        Self {
            d: m.d(),
            b: row_major(&m.b),
            sigma_e: row_major(&m.sigma_e),
        }
    }
}

impl TryFrom<ModelDocument> for CausalModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let b = from_row_major(doc.d, &doc.b, "B")?;
        let sigma_e = from_row_major(doc.d, &doc.sigma_e, "SigmaE")?;
        CausalModel::new(b, sigma_e)
    }
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

pub fn from_row_major(d: usize, values: &[f64], name: &str) -> Result<DMatrix<f64>> {
    if values.len() != d * d {
        return Err(Error::Dimension(format!(
            "{name} has {} entries, expected {}",
            values.len(),
            d * d
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, values))
}

/// A partition of the nodes into intervened (`J`) and observed (`U`) indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Experiment {
    d: usize,
    intervened: Vec<usize>,
    observed: Vec<usize>,
}

impl Experiment {
    pub fn new(d: usize, intervened: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; d];
        for i in intervened {
            if i >= d {
                return Err(Error::InvalidArgument(format!(
                    "node index {i} out of range for d = {d}"
                )));
            }
            mask[i] = true;
        }
        let intervened = (0..d).filter(|&i| mask[i]).collect();
        let observed = (0..d).filter(|&i| !mask[i]).collect();
        Ok(Self {
            d,
            intervened,
            observed,
        })
    }

    pub fn observational(d: usize) -> Self {
        Self {
            d,
            intervened: Vec::new(),
            observed: (0..d).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn intervened(&self) -> &[usize] {
        &self.intervened
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn is_observational(&self) -> bool {
        self.intervened.is_empty()
    }

    pub fn is_intervened(&self, i: usize) -> bool {
        self.intervened.binary_search(&i).is_ok()
    }

    /// Intervened indices, 1-based.
    pub fn one_based(&self) -> Vec<usize> {
        self.intervened.iter().map(|i| i + 1).collect()
    }

    pub fn from_one_based(d: usize, intervened: &[usize]) -> Result<Self> {
        if intervened.contains(&0) {
            return Err(Error::InvalidArgument(
                "node indices are 1-based; found 0".into(),
            ));
        }
        Self::new(d, intervened.iter().map(|i| i - 1))
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "J={{")?;
        for (k, i) in self.one_based().iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDesign {
    pub experiments: Vec<Experiment>,
}

impl ExperimentDesign {
    pub fn new(d: usize, experiments: Vec<Experiment>) -> Result<Self> {
        if experiments.iter().any(|e| e.d() != d) {
            return Err(Error::Dimension(format!(
                "experiment dimension differs from d = {d}"
            )));
        }
        if experiments.iter().filter(|e| e.is_observational()).count() > 1 {
            return Err(Error::InvalidArgument(
                "at most one purely observational experiment is allowed".into(),
            ));
        }
        Ok(Self { experiments })
    }

    pub fn len(&self) -> usize {
        self.experiments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiments.is_empty()
    }

    pub fn observational_index(&self) -> Option<usize> {
        self.experiments.iter().position(|e| e.is_observational())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DesignDocument {
            experiments: self.experiments.iter().map(|e| e.one_based()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(d: usize, text: &str) -> Result<Self> {
        let doc: DesignDocument = serde_json::from_str(text)?;
        let experiments = doc
            .experiments
            .iter()
            .map(|j| Experiment::from_one_based(d, j))
            .collect::<Result<Vec<_>>>()?;
        Self::new(d, experiments)
    }
}

/// `{"experiments": [[1-based intervened indices], ...]}`; `[]` is observational.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignDocument {
    pub experiments: Vec<Vec<usize>>,
}

/// Covariance of the intervention variables `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    pub sigma_c: DMatrix<f64>,
}

impl InterventionSpec {
    pub fn standard(d: usize) -> Self {
        Self {
            sigma_c: DMatrix::identity(d, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonzeroDiagonal { node: usize, value: f64 },
    Asymmetric { row: usize, col: usize },
    NotPsd { min_eigenvalue: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonzeroDiagonal { node, value } => {
                write!(f, "nonzero diagonal: b_{0}{0} = {value}", node + 1)
            }
            Violation::Asymmetric { row, col } => {
                write!(f, "SigmaE asymmetric at ({}, {})", row + 1, col + 1)
            }
            Violation::NotPsd { min_eigenvalue } => {
                write!(f, "SigmaE not PSD (eigenvalue {min_eigenvalue})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(model: &CausalModel) -> ValidationReport {
    let d = model.d();
    let mut violations = Vec::new();
    for i in 0..d {
        let v = model.b[(i, i)];
        if v != 0.0 {
            violations.push(Violation::NonzeroDiagonal { node: i, value: v });
        }
    }
    let mut symmetric = true;
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (model.sigma_e[(i, j)], model.sigma_e[(j, i)]);
            if (a - b).abs() > PSD_TOLERANCE * (1.0 + a.abs().max(b.abs())) {
                violations.push(Violation::Asymmetric { row: i, col: j });
                symmetric = false;
            }
        }
    }
    if symmetric {
        let min = linalg::min_eigenvalue(&model.sigma_e);
        if min < -PSD_TOLERANCE {
            violations.push(Violation::NotPsd {
                min_eigenvalue: min,
            });
        }
    }
    ValidationReport { violations }
}

/// `I - U_k B` is invertible (|det| > 1e-10 and condition number < 1e12).
pub fn weakly_stable(model: &CausalModel, exp: &Experiment) -> bool {
    linalg::is_invertible(&model.system_matrix(exp))
}

/// Observational experiment followed by one singleton intervention per node.
pub fn single_intervention_design(d: usize) -> ExperimentDesign {
    let mut experiments = vec![Experiment::observational(d)];
    experiments.extend((0..d).map(|k| Experiment {
        d,
        intervened: vec![k],
        observed: (0..d).filter(|&i| i != k).collect(),
    }));
    ExperimentDesign { experiments }
}

/// Every ordered pair `(i, u)`, `i != u`, has an experiment with `i` intervened and `u` observed.
pub fn pair_condition(design: &ExperimentDesign, d: usize) -> bool {
    first_uncovered_pair(design, d).is_none()
}

pub(crate) fn first_uncovered_pair(design: &ExperimentDesign, d: usize) -> Option<(usize, usize)> {
    let mut covered = vec![false; d * d];
    for exp in &design.experiments {
        for &i in exp.intervened() {
            for &u in exp.observed() {
                covered[i * d + u] = true;
            }
        }
    }
    (0..d)
        .flat_map(|i| (0..d).map(move |u| (i, u)))
        .find(|&(i, u)| i != u && !covered[i * d + u])
}

/// `(I - U B)^{-1} (U Σ_e U + J Σ_c J) (I - U B)^{-T}`.
pub fn population_covariance(
    model: &CausalModel,
    exp: &Experiment,
    spec: &InterventionSpec,
) -> Result<DMatrix<f64>> {
    let d = model.d();
    check_spec(spec, d)?;
    let a = model.reduced_form(exp)?;
    let u = linalg::diag_selector(d, exp.observed());
    let j = linalg::diag_selector(d, exp.intervened());
    let noise = &u * &model.sigma_e * &u + &j * &spec.sigma_c * &j;
    Ok(linalg::symmetrize(&(&a * noise * a.transpose())))
}

/// Total effects `T^k`: rows indexed by `U_k`, columns by `J_k`, computed as
/// `(U (I - U B)^{-1} J Σ_c J)` restricted to `(U_k, J_k)`.
pub fn population_total_effects(
    model: &CausalModel,
    exp: &Experiment,
    spec: &InterventionSpec,
) -> Result<DMatrix<f64>> {
    let d = model.d();
    check_spec(spec, d)?;
    if exp.is_observational() {
        return Err(Error::InvalidArgument(
            "total effects need at least one intervened node".into(),
        ));
    }
    let a = model.reduced_form(exp)?;
    let u = linalg::diag_selector(d, exp.observed());
    let j = linalg::diag_selector(d, exp.intervened());
    let full = u * a * &j * &spec.sigma_c * j;
    Ok(linalg::submatrix(&full, exp.observed(), exp.intervened()))
}

fn check_spec(spec: &InterventionSpec, d: usize) -> Result<()> {
    if spec.sigma_c.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "SigmaC is {:?}, expected ({d}, {d})",
            spec.sigma_c.shape()
        )));
    }
    Ok(())
}

/// Parameters of the random model generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLaw {
    /// Nonzero direct effects are `±Uniform[weight_min, weight_max]`.
    pub weight_min: f64,
    pub weight_max: f64,
    /// Disturbance variances are `Uniform[variance_min, variance_max]`.
    pub variance_min: f64,
    pub variance_max: f64,
    /// Confounder correlations are `±Uniform[rho_min, rho_max]`.
    pub rho_min: f64,
    pub rho_max: f64,
    pub max_spectral_radius: f64,
    pub psd_floor: f64,
    pub max_attempts: usize,
}

impl Default for ModelLaw {
    fn default() -> Self {
        Self {
            weight_min: 0.2,
            weight_max: 0.9,
            variance_min: 0.5,
            variance_max: 1.5,
            rho_min: 0.3,
            rho_max: 0.8,
            max_spectral_radius: 0.95,
            psd_floor: 1e-6,
            max_attempts: 1000,
        }
    }
}

/// Draws a random model with the default [`ModelLaw`].
pub fn random_model<R: Rng + ?Sized>(
    d: usize,
    edge_prob: f64,
    conf_prob: f64,
    rng: &mut R,
) -> Result<CausalModel> {
    random_model_with(d, edge_prob, conf_prob, &ModelLaw::default(), rng)
}

pub fn random_model_with<R: Rng + ?Sized>(
    d: usize,
    edge_prob: f64,
    conf_prob: f64,
    law: &ModelLaw,
    rng: &mut R,
) -> Result<CausalModel> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("d must be >= 2, got {d}")));
    }
    for (name, p) in [("edge_prob", edge_prob), ("conf_prob", conf_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in [0, 1], got {p}"
            )));
        }
    }
    let weight = Uniform::new_inclusive(law.weight_min, law.weight_max)
        .map_err(|e| Error::InvalidArgument(format!("weight law: {e}")))?;
    let variance = Uniform::new_inclusive(law.variance_min, law.variance_max)
        .map_err(|e| Error::InvalidArgument(format!("variance law: {e}")))?;
    let rho = Uniform::new_inclusive(law.rho_min, law.rho_max)
        .map_err(|e| Error::InvalidArgument(format!("confounder law: {e}")))?;
    let design = single_intervention_design(d);

    let mut last_reason = String::from("no attempt made");
    for _ in 0..law.max_attempts {
        let mut b = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i != j && rng.random_bool(edge_prob) {
                    let w = weight.sample(rng);
                    b[(i, j)] = signed(rng, w);
                }
            }
        }
        let sigma_e = random_disturbance_covariance(d, conf_prob, law, &variance, &rho, rng);

        let radius = linalg::spectral_radius(&b);
        if radius >= law.max_spectral_radius {
            last_reason = format!("spectral radius {radius:.3}");
            continue;
        }
        let model = CausalModel { b, sigma_e };
        if let Some(exp) = design
            .experiments
            .iter()
            .find(|e| !weakly_stable(&model, e))
        {
            last_reason = format!("not weakly stable under {exp}");
            continue;
        }
        return Ok(model);
    }
    Err(Error::GenerationFailed {
        attempts: law.max_attempts,
        reason: last_reason,
    })
}

fn random_disturbance_covariance<R: Rng + ?Sized>(
    d: usize,
    conf_prob: f64,
    law: &ModelLaw,
    variance: &Uniform<f64>,
    rho: &Uniform<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let vars: Vec<f64> = (0..d).map(|_| variance.sample(rng)).collect();
    let mut sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vars.clone()));
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.random_bool(conf_prob) {
                let r = rho.sample(rng);
                let r = signed(rng, r);
                let c = r * (vars[i] * vars[j]).sqrt();
                sigma[(i, j)] = c;
                sigma[(j, i)] = c;
            }
        }
    }
    if linalg::min_eigenvalue(&sigma) < law.psd_floor {
        sigma = linalg::clip_eigenvalues(&sigma, law.psd_floor);
    }
    sigma
}

fn signed<R: Rng + ?Sized>(rng: &mut R, magnitude: f64) -> f64 {
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}
