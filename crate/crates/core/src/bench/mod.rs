//! Monte Carlo contamination benchmark.
//!
//! For every random model the harness draws one clean sample per experiment,
//! contaminates copies of it at each rate, fits every estimator on the same
//! contaminated data and records relative Frobenius errors for `B` and `Σ_e`.
//! Every random stream is derived from `(master_seed, model_id, ...)`, so
//! results do not depend on how models are scheduled across threads.

mod metrics;
mod report;
mod wilcoxon;

pub use metrics::{mad, median, rfe};
pub use report::{emit_report, read_records, PLOT_REFERENCE_LINE};
pub use wilcoxon::wilcoxon_signed_rank;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covest::{GdeConfig, McdConfig, Method};
use crate::error::{Error, Result};
use crate::llc::{llc_fit, Backend, LlcEstimate};
use crate::model::{random_model, single_intervention_design, CausalModel, InterventionSpec};
use crate::simulate::{contaminate, draw_sample, ContaminationSpec, ContaminationTarget, Sample};

/// Outlier law shared by all contamination rates of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContaminationLaw {
    pub target: ContaminationTarget,
    pub outlier_location: f64,
    pub outlier_scale: f64,
}

impl Default for ContaminationLaw {
    fn default() -> Self {
        Self {
            target: ContaminationTarget::X,
            outlier_location: 10.0,
            outlier_scale: 1.0,
        }
    }
}

impl ContaminationLaw {
    pub fn at_rate(&self, rate: f64) -> ContaminationSpec {
        ContaminationSpec {
            rate,
            target: self.target,
            outlier_location: self.outlier_location,
            outlier_scale: self.outlier_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_models: usize,
    pub d: usize,
    /// Sample size of every experiment.
    pub n: usize,
    pub edge_prob: f64,
    pub conf_prob: f64,
    pub epsilons: Vec<f64>,
    pub estimators: Vec<Method>,
    pub mcd: McdConfig,
    pub gde: GdeConfig,
    pub contamination: ContaminationLaw,
    pub lambda: f64,
    pub master_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_models: 200,
            d: 5,
            n: 200,
            edge_prob: 0.3,
            conf_prob: 0.3,
            epsilons: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            estimators: Method::ALL.to_vec(),
            mcd: McdConfig::default(),
            gde: GdeConfig::default(),
            contamination: ContaminationLaw::default(),
            lambda: 0.0,
            master_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 {
            return Err(Error::InvalidArgument("n_models must be at least 1".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return Err(Error::InvalidArgument(format!(
                "contamination rates must lie in [0, 1), got {e}"
            )));
        }
        if self.d < 2 || self.n <= self.d {
            return Err(Error::InvalidArgument(format!(
                "need d >= 2 and n > d, got d = {}, n = {}",
                self.d, self.n
            )));
        }
        self.mcd.validate()?;
        self.contamination.at_rate(0.0).validate()
    }

    pub fn backend(&self, method: Method) -> Backend {
        match method {
            Method::Scm => Backend::Scm,
            Method::Mcd => Backend::Mcd(self.mcd),
            Method::Gde => Backend::Gde(self.gde),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    Ok,
    /// A constraint block exceeded the condition limit.
    IllConditioned,
    RankDeficient,
    FitFailed,
    ModelFailed,
    /// The true matrix is zero, so its RFE is undefined.
    ZeroTruth,
}

impl RecordFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordFlag::Ok => "ok",
            RecordFlag::IllConditioned => "ill_conditioned",
            RecordFlag::RankDeficient => "rank_deficient",
            RecordFlag::FitFailed => "fit_failed",
            RecordFlag::ModelFailed => "model_failed",
            RecordFlag::ZeroTruth => "zero_truth",
        }
    }
}

impl std::str::FromStr for RecordFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            RecordFlag::Ok,
            RecordFlag::IllConditioned,
            RecordFlag::RankDeficient,
            RecordFlag::FitFailed,
            RecordFlag::ModelFailed,
            RecordFlag::ZeroTruth,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown record flag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub model_id: usize,
    pub estimator: Method,
    pub epsilon: f64,
    /// NaN when undefined (see `flag`).
    pub rfe_b: f64,
    pub rfe_sigma_e: f64,
    pub runtime_secs: f64,
    pub flag: RecordFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "B")]
    B,
    #[serde(rename = "SigmaE")]
    SigmaE,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::B, Target::SigmaE];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::B => "B",
            Target::SigmaE => "SigmaE",
        }
    }

    pub fn value(self, r: &Record) -> f64 {
        match self {
            Target::B => r.rfe_b,
            Target::SigmaE => r.rfe_sigma_e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimator: Method,
    pub epsilon: f64,
    pub target: Target,
    pub median: f64,
    pub mad: f64,
    /// Finite RFE values that entered the statistics.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub epsilon: f64,
    pub target: Target,
    pub first: Method,
    pub second: Method,
    pub n_pairs: usize,
    /// NaN when fewer than five complete pairs exist.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub pvalues: Vec<PairwiseTest>,
}

impl BenchmarkReport {
    pub fn aggregate_for(
        &self,
        estimator: Method,
        epsilon: f64,
        target: Target,
    ) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.estimator == estimator && a.epsilon == epsilon && a.target == target)
    }

    pub fn pvalue_for(
        &self,
        epsilon: f64,
        target: Target,
        first: Method,
        second: Method,
    ) -> Option<&PairwiseTest> {
        self.pvalues.iter().find(|p| {
            p.epsilon == epsilon
                && p.target == target
                && ((p.first == first && p.second == second)
                    || (p.first == second && p.second == first))
        })
    }

    /// Finite RFE values for one cell, ordered by model id.
    pub fn values(&self, estimator: Method, epsilon: f64, target: Target) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.estimator == estimator && r.epsilon == epsilon)
            .map(|r| target.value(r))
            .filter(|v| v.is_finite())
            .collect()
    }
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `seed` and a path of tags.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let derived = tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)));
    ChaCha8Rng::seed_from_u64(derived)
}

const STREAM_SAMPLE: u64 = 1;
const STREAM_CONTAMINATION: u64 = 2;

/// Runs the benchmark on `jobs` worker threads (1 runs on the calling thread).
pub fn run_benchmark(cfg: &BenchmarkConfig, jobs: usize) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let per_model: Vec<Vec<Record>> = if jobs <= 1 {
        (0..cfg.n_models).map(|id| run_model(cfg, id)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..cfg.n_models)
                .into_par_iter()
                .map(|id| run_model(cfg, id))
                .collect()
        })
    };
    let records: Vec<Record> = per_model.into_iter().flatten().collect();
    let aggregates = aggregate(&records);
    let pvalues = pairwise_tests(&records);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        records,
        aggregates,
        pvalues,
    })
}

/// The random model of a benchmark slot, seeded by `master_seed + model_id`.
pub fn benchmark_model(cfg: &BenchmarkConfig, model_id: usize) -> Result<CausalModel> {
    let seed = cfg.master_seed.wrapping_add(model_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_model(cfg.d, cfg.edge_prob, cfg.conf_prob, &mut rng)
}

/// Clean per-experiment samples of a benchmark slot.
pub fn benchmark_samples(
    cfg: &BenchmarkConfig,
    model_id: usize,
    model: &CausalModel,
) -> Result<Vec<Sample>> {
    let seed = cfg.master_seed.wrapping_add(model_id as u64);
    let spec = InterventionSpec::standard(cfg.d);
    single_intervention_design(cfg.d)
        .experiments
        .iter()
        .enumerate()
        .map(|(k, exp)| {
            let mut rng = substream(seed, &[STREAM_SAMPLE, k as u64]);
            draw_sample(model, exp, cfg.n, &spec, &mut rng)
        })
        .collect()
}

/// Contaminated copies of `clean` at rate `epsilon`. The stream depends on the
/// rate's position in the grid, so every estimator sees identical data.
pub fn contaminated_samples(
    cfg: &BenchmarkConfig,
    model_id: usize,
    eps_index: usize,
    epsilon: f64,
    model: &CausalModel,
    clean: &[Sample],
) -> Result<Vec<Sample>> {
    let seed = cfg.master_seed.wrapping_add(model_id as u64);
    let spec = cfg.contamination.at_rate(epsilon);
    clean
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if spec.target == ContaminationTarget::C && s.experiment.is_observational() {
                return Ok(s.clone());
            }
            let mut rng = substream(seed, &[STREAM_CONTAMINATION, eps_index as u64, k as u64]);
            contaminate(s, model, &spec, &mut rng)
        })
        .collect()
}

fn run_model(cfg: &BenchmarkConfig, model_id: usize) -> Vec<Record> {
    let failed = |flag: RecordFlag| -> Vec<Record> {
        cfg.epsilons
            .iter()
            .flat_map(|&epsilon| {
                cfg.estimators.iter().map(move |&estimator| Record {
                    model_id,
                    estimator,
                    epsilon,
                    rfe_b: f64::NAN,
                    rfe_sigma_e: f64::NAN,
                    runtime_secs: 0.0,
                    flag,
                })
            })
            .collect()
    };
    let Ok(model) = benchmark_model(cfg, model_id) else {
        return failed(RecordFlag::ModelFailed);
    };
    let Ok(clean) = benchmark_samples(cfg, model_id, &model) else {
        return failed(RecordFlag::ModelFailed);
    };
    let design = single_intervention_design(cfg.d);

    let mut records = Vec::with_capacity(cfg.epsilons.len() * cfg.estimators.len());
    for (eps_index, &epsilon) in cfg.epsilons.iter().enumerate() {
        let samples = contaminated_samples(cfg, model_id, eps_index, epsilon, &model, &clean);
        for &estimator in &cfg.estimators {
            let start = Instant::now();
            let fit = samples.as_ref().map_err(|_| ()).and_then(|s| {
                llc_fit(s, &design, &cfg.backend(estimator), cfg.lambda).map_err(|_| ())
            });
            let runtime_secs = start.elapsed().as_secs_f64();
            let record = match fit {
                Ok(est) => score(model_id, estimator, epsilon, runtime_secs, &est, &model),
                Err(()) => Record {
                    model_id,
                    estimator,
                    epsilon,
                    rfe_b: f64::NAN,
                    rfe_sigma_e: f64::NAN,
                    runtime_secs,
                    flag: RecordFlag::FitFailed,
                },
            };
            records.push(record);
        }
    }
    records
}

fn score(
    model_id: usize,
    estimator: Method,
    epsilon: f64,
    runtime_secs: f64,
    est: &LlcEstimate,
    model: &CausalModel,
) -> Record {
    let rfe_or_nan = |a: &DMatrix<f64>, b: &DMatrix<f64>| rfe(a, b).unwrap_or(f64::NAN);
    let rfe_b = rfe_or_nan(&est.b_hat, &model.b);
    let rfe_sigma_e = rfe_or_nan(&est.sigma_e_hat, &model.sigma_e);
    let flag = if rfe_b.is_nan() || rfe_sigma_e.is_nan() {
        RecordFlag::ZeroTruth
    } else if est.diagnostics.solve.rank_deficient {
        RecordFlag::RankDeficient
    } else if est.diagnostics.conditioning.singular {
        RecordFlag::IllConditioned
    } else {
        RecordFlag::Ok
    };
    Record {
        model_id,
        estimator,
        epsilon,
        rfe_b,
        rfe_sigma_e,
        runtime_secs,
        flag,
    }
}

fn distinct_epsilons(records: &[Record]) -> Vec<f64> {
    let mut eps: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    eps
}

fn distinct_estimators(records: &[Record]) -> Vec<Method> {
    let mut m: Vec<Method> = records.iter().map(|r| r.estimator).collect();
    m.sort();
    m.dedup();
    m
}

/// Median and unscaled MAD of the finite RFEs per (estimator, rate, target).
pub fn aggregate(records: &[Record]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for epsilon in distinct_epsilons(records) {
        for estimator in distinct_estimators(records) {
            let cell: Vec<&Record> = records
                .iter()
                .filter(|r| r.estimator == estimator && r.epsilon == epsilon)
                .collect();
            if cell.is_empty() {
                continue;
            }
            for target in Target::ALL {
                let values: Vec<f64> = cell
                    .iter()
                    .map(|r| target.value(r))
                    .filter(|v| v.is_finite())
                    .collect();
                out.push(Aggregate {
                    estimator,
                    epsilon,
                    target,
                    median: median(&values),
                    mad: mad(&values),
                    count: values.len(),
                });
            }
        }
    }
    out
}

/// Wilcoxon signed-rank tests between every pair of estimators, paired by model.
pub fn pairwise_tests(records: &[Record]) -> Vec<PairwiseTest> {
    let estimators = distinct_estimators(records);
    let mut out = Vec::new();
    for epsilon in distinct_epsilons(records) {
        for target in Target::ALL {
            for (a_idx, &first) in estimators.iter().enumerate() {
                for &second in &estimators[a_idx + 1..] {
                    let value_of = |m: Method| {
                        records
                            .iter()
                            .filter(move |r| r.estimator == m && r.epsilon == epsilon)
                            .map(move |r| (r.model_id, target.value(r)))
                    };
                    let lookup: std::collections::HashMap<usize, f64> = value_of(second).collect();
                    let (xs, ys): (Vec<f64>, Vec<f64>) = value_of(first)
                        .filter_map(|(id, v)| lookup.get(&id).map(|w| (v, *w)))
                        .filter(|(v, w)| v.is_finite() && w.is_finite())
                        .unzip();
                    let p_value = wilcoxon_signed_rank(&xs, &ys).unwrap_or(f64::NAN);
                    out.push(PairwiseTest {
                        epsilon,
                        target,
                        first,
                        second,
                        n_pairs: xs.len(),
                        p_value,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> BenchmarkConfig {
        BenchmarkConfig {
            n_models: 6,
            n: 60,
            d: 3,
            epsilons: vec![0.0, 0.1],
            mcd: McdConfig {
                n_starts: 10,
                ..McdConfig::default()
            },
            master_seed: 11,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn one_record_per_triple() {
        let cfg = small_config();
        let report = run_benchmark(&cfg, 1).unwrap();
        assert_eq!(report.records.len(), 6 * 3 * 2);
        let mut keys: Vec<(usize, Method, u64)> = report
            .records
            .iter()
            .map(|r| (r.model_id, r.estimator, r.epsilon.to_bits()))
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), report.records.len());
        assert_eq!(report.aggregates, aggregate(&report.records));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = small_config();
        let serial = run_benchmark(&cfg, 1).unwrap();
        let parallel = run_benchmark(&cfg, 3).unwrap();
        let strip = |r: &BenchmarkReport| {
            r.records
                .iter()
                .map(|x| {
                    (
                        x.model_id,
                        x.estimator,
                        x.rfe_b.to_bits(),
                        x.rfe_sigma_e.to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&serial), strip(&parallel));
    }

    #[test]
    fn estimators_see_identical_data() {
        let cfg = small_config();
        let model = benchmark_model(&cfg, 2).unwrap();
        let clean = benchmark_samples(&cfg, 2, &model).unwrap();
        let a = contaminated_samples(&cfg, 2, 1, 0.1, &model, &clean).unwrap();
        let b = contaminated_samples(&cfg, 2, 1, 0.1, &model, &clean).unwrap();
        assert_eq!(a, b);
        let zero = contaminated_samples(&cfg, 2, 0, 0.0, &model, &clean).unwrap();
        assert_eq!(zero, clean);
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = small_config();
        cfg.epsilons = vec![1.0];
        assert!(run_benchmark(&cfg, 1).is_err());
        let mut cfg = small_config();
        cfg.n_models = 0;
        assert!(run_benchmark(&cfg, 1).is_err());
    }

    #[test]
    fn aggregate_skips_undefined_values() {
        let rec = |id, v| Record {
            model_id: id,
            estimator: Method::Scm,
            epsilon: 0.0,
            rfe_b: v,
            rfe_sigma_e: 1.0,
            runtime_secs: 0.0,
            flag: RecordFlag::Ok,
        };
        let agg = aggregate(&[rec(0, 1.0), rec(1, f64::NAN), rec(2, 3.0), rec(3, 2.0)]);
        let b = agg.iter().find(|a| a.target == Target::B).unwrap();
        assert_eq!((b.median, b.mad, b.count), (2.0, 1.0, 3));
    }

    #[test]
    fn substreams_differ_by_tag() {
        use rand::Rng;
        let a: u64 = substream(1, &[1, 0]).random();
        let b: u64 = substream(1, &[1, 1]).random();
        let c: u64 = substream(1, &[1, 0]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn config_json_fills_defaults() {
        let cfg: BenchmarkConfig =
            serde_json::from_str(r#"{"n_models": 3, "estimators": ["SCM"]}"#).unwrap();
        assert_eq!(cfg.n_models, 3);
        assert_eq!(cfg.estimators, vec![Method::Scm]);
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.epsilons, vec![0.0, 0.05, 0.1, 0.2, 0.3]);
    }
}
