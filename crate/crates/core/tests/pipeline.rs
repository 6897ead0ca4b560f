use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_llc::bench::{emit_report, read_records, rfe, run_benchmark, BenchmarkConfig};
use robust_llc::covest::Method;
use robust_llc::llc::{llc_fit, Backend};
use robust_llc::model::{
    random_model, random_model_with, single_intervention_design, weakly_stable, InterventionSpec,
    ModelLaw,
};
use robust_llc::simulate::draw_sample;

#[test]
fn edge_count_follows_binomial_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 2000;
    let total: usize = (0..draws)
        .map(|_| random_model(5, 0.3, 0.3, &mut rng).unwrap().edge_count())
        .sum();
    let mean = total as f64 / draws as f64;
    let se = (20.0 * 0.3 * 0.7 / draws as f64).sqrt();
    assert!((mean - 6.0).abs() < 3.0 * se, "mean edge count {mean}");
}

#[test]
fn edge_inclusion_is_exactly_binomial_without_rejection() {
    let law = ModelLaw {
        weight_min: 0.05,
        weight_max: 0.2,
        ..ModelLaw::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 4000;
    let total: usize = (0..draws)
        .map(|_| {
            random_model_with(5, 0.3, 0.3, &law, &mut rng)
                .unwrap()
                .edge_count()
        })
        .sum();
    let mean = total as f64 / draws as f64;
    let se = (20.0 * 0.3 * 0.7 / draws as f64).sqrt();
    assert!((mean - 6.0).abs() < 3.0 * se, "mean edge count {mean}");
}

#[test]
fn generated_models_are_weakly_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let model = random_model(5, 0.5, 0.3, &mut rng).unwrap();
        for exp in &single_intervention_design(5).experiments {
            assert!(weakly_stable(&model, exp));
        }
    }
}

#[test]
fn robust_backends_fit_clean_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_model(4, 0.4, 0.3, &mut rng).unwrap();
    let design = single_intervention_design(4);
    let spec = InterventionSpec::standard(4);
    let samples: Vec<_> = design
        .experiments
        .iter()
        .map(|e| draw_sample(&model, e, 3000, &spec, &mut rng).unwrap())
        .collect();
    // Raw MCD at maximal breakdown has low Gaussian efficiency.
    for (backend, bound) in [
        (Backend::Scm, 0.2),
        (Backend::Mcd(Default::default()), 1.5),
        (Backend::Gde(Default::default()), 0.2),
    ] {
        let est = llc_fit(&samples, &design, &backend, 0.0).unwrap();
        let err = rfe(&est.b_hat, &model.b).unwrap();
        assert!(err < bound, "{:?}: {err}", backend.method());
    }
}

#[test]
fn report_is_byte_deterministic_and_round_trips() {
    let cfg = BenchmarkConfig {
        n_models: 4,
        d: 3,
        n: 80,
        epsilons: vec![0.0, 0.1],
        estimators: vec![Method::Scm, Method::Gde],
        master_seed: 21,
        ..BenchmarkConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = run_benchmark(&cfg, 1).unwrap();
    emit_report(&report, &a, false).unwrap();
    emit_report(&run_benchmark(&cfg, 2).unwrap(), &b, false).unwrap();
    for file in [
        "records.csv",
        "aggregates.csv",
        "pvalues.csv",
        "boxplot.csv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let back = read_records(&a.join("records.csv")).unwrap();
    assert_eq!(back.len(), 4 * 2 * 2);
    for (x, y) in report.records.iter().zip(&back) {
        assert_eq!(
            (x.model_id, x.estimator, x.flag),
            (y.model_id, y.estimator, y.flag)
        );
        assert!((x.rfe_b - y.rfe_b).abs() <= 1e-12);
        assert!((x.rfe_sigma_e - y.rfe_sigma_e).abs() <= 1e-12);
    }
}
