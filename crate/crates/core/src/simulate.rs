//! Finite interventional samples and replacement contamination.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CausalModel, Experiment, InterventionSpec};

/// `n` realizations of `x` under one experiment, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub experiment: Experiment,
    pub data: DMatrix<f64>,
}

impl Sample {
    pub fn new(experiment: Experiment, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != experiment.d() {
            return Err(Error::Dimension(format!(
                "sample has {} columns, experiment has d = {}",
                data.ncols(),
                experiment.d()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sample contains non-finite values".into(),
            ));
        }
        Ok(Self { experiment, data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Writes the sample as CSV with header `x1,...,xd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record((1..=self.d()).map(|i| format!("x{i}")))?;
        for r in 0..self.n() {
            w.write_record(self.data.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, experiment: Experiment) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let d = rdr.headers()?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for record in rdr.records() {
            let record = record?;
            if record.len() != d {
                return Err(Error::Dimension(format!(
                    "row {} has {} fields, expected {d}",
                    n + 1,
                    record.len()
                )));
            }
            for field in record.iter() {
                values.push(
                    field.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad number {field:?}: {e}"))
                    })?,
                );
            }
            n += 1;
        }
        Self::new(experiment, DMatrix::from_row_slice(n, d, &values))
    }
}

/// Sidecar metadata written next to each sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub d: usize,
    pub n: usize,
    /// 1-based intervened indices; empty for the observational experiment.
    pub intervened: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub contamination: Option<ContaminationSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationTarget {
    /// Replace whole observations.
    X,
    /// Replace the disturbances of non-intervened nodes and re-simulate.
    E,
    /// Replace the intervention values and re-simulate.
    C,
}

impl std::str::FromStr for ContaminationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Self::X),
            "e" => Ok(Self::E),
            "c" => Ok(Self::C),
            other => Err(Error::InvalidArgument(format!(
                "unknown contamination target {other:?} (expected x, e or c)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub rate: f64,
    pub target: ContaminationTarget,
    /// Outliers are drawn from `N(location * 1, scale^2 * I)`.
    pub outlier_location: f64,
    pub outlier_scale: f64,
}

impl ContaminationSpec {
    pub fn new(rate: f64, target: ContaminationTarget) -> Self {
        Self {
            rate,
            target,
            outlier_location: 10.0,
            outlier_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidArgument(format!(
                "contamination rate must lie in [0, 1), got {}",
                self.rate
            )));
        }
        if self.outlier_scale.is_nan()
            || self.outlier_scale <= 0.0
            || !self.outlier_location.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "outlier law N({}, {}^2) is invalid",
                self.outlier_location, self.outlier_scale
            )));
        }
        Ok(())
    }

    /// `floor(rate * n)`.
    pub fn count(&self, n: usize) -> usize {
        ((self.rate * n as f64) + 1e-9).floor() as usize
    }
}

/// Draws `n` rows of `x = (I - U B)^{-1} (U e + J c)` with `e ~ N(0, Σ_e)`, `c ~ N(0, Σ_c)`.
/// Intervened coordinates are set to the `c` draws exactly.
pub fn draw_sample<R: Rng + ?Sized>(
    model: &CausalModel,
    exp: &Experiment,
    n: usize,
    spec: &InterventionSpec,
    rng: &mut R,
) -> Result<Sample> {
    let d = model.d();
    if exp.d() != d {
        return Err(Error::Dimension(
            "experiment and model disagree on d".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    if spec.sigma_c.shape() != (d, d) {
        return Err(Error::Dimension("SigmaC must be d x d".into()));
    }
    let reduced = model.reduced_form(exp)?;
    let e_factor = linalg::psd_factor(&model.sigma_e);
    let c_factor = linalg::psd_factor(&spec.sigma_c);

    let mut data = DMatrix::zeros(n, d);
    for r in 0..n {
        let e = &e_factor * standard_normal(d, rng);
        let c = &c_factor * standard_normal(d, rng);
        let x = propagate(&reduced, exp, &e, &c);
        data.set_row(r, &x.transpose());
    }
    Sample::new(exp.clone(), data)
}

/// Replaces `floor(rate * n)` randomly chosen rows according to `spec`.
pub fn contaminate<R: Rng + ?Sized>(
    sample: &Sample,
    model: &CausalModel,
    spec: &ContaminationSpec,
    rng: &mut R,
) -> Result<Sample> {
    spec.validate()?;
    let exp = &sample.experiment;
    if spec.target == ContaminationTarget::C && exp.is_observational() {
        return Err(Error::InvalidArgument(
            "cannot contaminate c in the observational experiment".into(),
        ));
    }
    let (n, d) = sample.data.shape();
    if d != model.d() {
        return Err(Error::Dimension("sample and model disagree on d".into()));
    }
    let m = spec.count(n);
    let mut out = sample.clone();
    if m == 0 {
        return Ok(out);
    }
    let mut rows = rand::seq::index::sample(rng, n, m).into_vec();
    rows.sort_unstable();

    let reduced = match spec.target {
        ContaminationTarget::X => None,
        _ => Some(model.reduced_form(exp)?),
    };
    for r in rows {
        let x = sample.data.row(r).transpose();
        let new_x = match (spec.target, &reduced) {
            (ContaminationTarget::X, _) => outlier(d, spec, rng),
            (ContaminationTarget::E, Some(reduced)) => {
                // Keep c = x_J, replace e on U.
                let draw = outlier(d, spec, rng);
                let mut e = DVector::zeros(d);
                for &u in exp.observed() {
                    e[u] = draw[u];
                }
                propagate(reduced, exp, &e, &x)
            }
            (ContaminationTarget::C, Some(reduced)) => {
                // e_U = (x - B x)_U is recovered from the structural equations.
                let residual = &x - &model.b * &x;
                let draw = outlier(d, spec, rng);
                let mut c = DVector::zeros(d);
                for &j in exp.intervened() {
                    c[j] = draw[j];
                }
                propagate(reduced, exp, &residual, &c)
            }
            _ => unreachable!("reduced form computed for e and c targets"),
        };
        out.data.set_row(r, &new_x.transpose());
    }
    Ok(out)
}

/// `x = (I - U B)^{-1} (U e + J c)`, with `x_J = c_J` enforced exactly.
fn propagate(
    reduced: &DMatrix<f64>,
    exp: &Experiment,
    e: &DVector<f64>,
    c: &DVector<f64>,
) -> DVector<f64> {
    let mut source = DVector::zeros(e.len());
    for &u in exp.observed() {
        source[u] = e[u];
    }
    for &j in exp.intervened() {
        source[j] = c[j];
    }
    let mut x = reduced * source;
    for &j in exp.intervened() {
        x[j] = c[j];
    }
    x
}

fn standard_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

fn outlier<R: Rng + ?Sized>(d: usize, spec: &ContaminationSpec, rng: &mut R) -> DVector<f64> {
    standard_normal(d, rng).map(|z: f64| spec.outlier_location + spec.outlier_scale * z)
}
