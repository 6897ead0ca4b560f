//! Small deterministic counterexamples showing how plain LLC breaks down:
//! a single scaled observation drives `B̂` to infinity, ridge shrinkage does not
//! bound it, and special effect values make a constraint block singular.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg;
use crate::llc::{
    assemble_constraints, condition_diagnostics, llc_fit, solve_b, Backend, ConstraintSystem,
    TotalEffect,
};
use crate::model::{single_intervention_design, CausalModel, ExperimentDesign, InterventionSpec};
use crate::simulate::draw_sample;

pub const SCALES: [f64; 3] = [1e2, 1e4, 1e6];
pub const LAMBDAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const DELTAS: [f64; 4] = [1e-1, 1e-4, 1e-8, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledOutlierRow {
    pub scale: f64,
    pub b_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRow {
    pub scale: f64,
    pub lambda: f64,
    pub t_norm: f64,
    pub b_norm: f64,
    /// Largest deviation of the ridge solution from `t / (1 + lambda)`.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularBlockRow {
    pub delta: f64,
    pub block_conditions: Vec<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownTrace {
    pub scaled: Vec<ScaledOutlierRow>,
    pub ridge: Vec<RidgeRow>,
    pub singular: Vec<SingularBlockRow>,
}

impl BreakdownTrace {
    pub fn scaled_strictly_increasing(&self) -> bool {
        self.scaled.windows(2).all(|w| w[1].b_norm > w[0].b_norm)
    }

    pub fn ridge_max_error(&self) -> f64 {
        self.ridge.iter().map(|r| r.max_error).fold(0.0, f64::max)
    }

    /// Flag state of the exact construction (`delta = 0`).
    pub fn exact_singular_flagged(&self) -> bool {
        self.singular.iter().any(|r| r.delta == 0.0 && r.flagged)
    }
}

pub fn breakdown_trace() -> Result<BreakdownTrace> {
    Ok(BreakdownTrace {
        scaled: scaled_outlier(&SCALES)?,
        ridge: ridge_closed_form(&SCALES, &LAMBDAS)?,
        singular: singular_block(&DELTAS)?,
    })
}

/// Two nodes, `x2 = 0.5 x1 + e2`; the `x2` entry of one row in the
/// `do(x1)` sample is multiplied by `s` and LLC is fitted with the SCM.
pub fn scaled_outlier(scales: &[f64]) -> Result<Vec<ScaledOutlierRow>> {
    let mut b = DMatrix::zeros(2, 2);
    b[(1, 0)] = 0.5;
    let model = CausalModel::new(b, DMatrix::identity(2, 2))?;
    let design = single_intervention_design(2);
    let spec = InterventionSpec::standard(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = design
        .experiments
        .iter()
        .map(|e| draw_sample(&model, e, 200, &spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    scales
        .iter()
        .map(|&s| {
            let mut samples = clean.clone();
            samples[1].data[(0, 1)] *= s;
            let est = llc_fit(&samples, &design, &Backend::Scm, 0.0)?;
            Ok(ScaledOutlierRow {
                scale: s,
                b_norm: linalg::frobenius(&est.b_hat),
            })
        })
        .collect()
}

fn two_node_system(t: [f64; 2]) -> Result<ConstraintSystem> {
    let design = ExperimentDesign::new(
        2,
        vec![
            crate::model::Experiment::observational(2),
            crate::model::Experiment::new(2, [0])?,
            crate::model::Experiment::new(2, [1])?,
        ],
    )?;
    let effects = [
        TotalEffect {
            observed: 1,
            intervened: 0,
            experiment: 1,
            value: t[0],
        },
        TotalEffect {
            observed: 0,
            intervened: 1,
            experiment: 2,
            value: t[1],
        },
    ];
    assemble_constraints(&effects, &design, 2)
}

/// On the two-node system `T = I`, so ridge returns `t / (1 + lambda)`:
/// shrinkage rescales an unbounded solution but does not bound it.
pub fn ridge_closed_form(scales: &[f64], lambdas: &[f64]) -> Result<Vec<RidgeRow>> {
    let mut rows = Vec::new();
    for &s in scales {
        let t = [0.7 * s, -0.4 * s];
        let system = two_node_system(t)?;
        for &lambda in lambdas {
            let (b, _) = solve_b(&system, lambda)?;
            let expected = DVector::from_row_slice(&t) / (1.0 + lambda);
            let got = DVector::from_row_slice(&[b[(1, 0)], b[(0, 1)]]);
            let max_error = (&got - &expected).amax() / expected.amax();
            rows.push(RidgeRow {
                scale: s,
                lambda,
                t_norm: DVector::from_row_slice(&t).norm(),
                b_norm: linalg::frobenius(&b),
                max_error,
            });
        }
    }
    Ok(rows)
}

/// Three nodes under single interventions. With `t(x3 -> x2) = 0.8` and
/// `t(x2 -> x3) = 1/0.8 + delta` the block of node 1 is `[[1, t23], [t32, 1]]`,
/// singular at `delta = 0`.
pub fn singular_block(deltas: &[f64]) -> Result<Vec<SingularBlockRow>> {
    let design = single_intervention_design(3);
    let t32 = 0.8;
    deltas
        .iter()
        .map(|&delta| {
            let t23 = 1.0 / t32 + delta;
            let mut effects = Vec::new();
            for k in 1..=3 {
                let i = k - 1;
                for u in (0..3).filter(|&u| u != i) {
                    let value = match (i, u) {
                        (1, 2) => t23,
                        (2, 1) => t32,
                        _ => 0.3,
                    };
                    effects.push(TotalEffect {
                        observed: u,
                        intervened: i,
                        experiment: k,
                        value,
                    });
                }
            }
            let system = assemble_constraints(&effects, &design, 3)?;
            let report = condition_diagnostics(&system);
            Ok(SingularBlockRow {
                delta,
                block_conditions: report.block_conditions,
                flagged: report.singular,
            })
        })
        .collect()
}

impl fmt::Display for BreakdownTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scaled outlier, two nodes, SCM back end")?;
        writeln!(f, "{:>10}  {:>14}", "s", "||B_hat||_F")?;
        for r in &self.scaled {
            writeln!(f, "{:>10.0e}  {:>14.6e}", r.scale, r.b_norm)?;
        }
        writeln!(
            f,
            "strictly increasing: {}",
            self.scaled_strictly_increasing()
        )?;
        writeln!(f)?;
        writeln!(f, "ridge on T = I, b = t / (1 + lambda)")?;
        writeln!(
            f,
            "{:>10}  {:>8}  {:>14}  {:>14}  {:>10}",
            "s", "lambda", "||t||", "||b||", "rel err"
        )?;
        for r in &self.ridge {
            writeln!(
                f,
                "{:>10.0e}  {:>8}  {:>14.6e}  {:>14.6e}  {:>10.2e}",
                r.scale, r.lambda, r.t_norm, r.b_norm, r.max_error
            )?;
        }
        writeln!(f)?;
        writeln!(f, "singular block, t23 = 1/t32 + delta")?;
        writeln!(
            f,
            "{:>10}  {:>40}  {:>7}",
            "delta", "block condition numbers", "flag"
        )?;
        for r in &self.singular {
            let conds: Vec<String> = r
                .block_conditions
                .iter()
                .map(|c| format!("{c:.3e}"))
                .collect();
            writeln!(
                f,
                "{:>10.0e}  {:>40}  {:>7}",
                r.delta,
                conds.join(" "),
                r.flagged
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_outlier_diverges() {
        let rows = scaled_outlier(&SCALES).unwrap();
        assert!(rows.windows(2).all(|w| w[1].b_norm > w[0].b_norm * 10.0));
    }

    #[test]
    fn ridge_matches_closed_form() {
        let rows = ridge_closed_form(&SCALES, &LAMBDAS).unwrap();
        assert!(rows.iter().all(|r| r.max_error < 1e-12));
        for r in &rows {
            assert!((r.b_norm * (1.0 + r.lambda) / r.t_norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_construction_flags() {
        let rows = singular_block(&DELTAS).unwrap();
        assert!(!rows[0].flagged);
        assert!(rows.last().unwrap().flagged);
        assert!(rows[0].block_conditions[0] < rows[1].block_conditions[0]);
        assert!(rows.iter().all(|r| r.block_conditions[1] < 10.0));
    }

    #[test]
    fn trace_renders() {
        let trace = breakdown_trace().unwrap();
        let text = trace.to_string();
        assert!(text.contains("strictly increasing: true"));
        assert_eq!(text.matches("true").count(), 1 + 2);
    }
}
