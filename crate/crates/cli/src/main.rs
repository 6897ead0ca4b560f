use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use robust_llc::bench::{emit_report, rfe, run_benchmark, substream, BenchmarkConfig};
use robust_llc::covest::{GdeConfig, McdConfig, Method};
use robust_llc::demo::breakdown_trace;
use robust_llc::llc::{llc_fit, Backend};
use robust_llc::model::{
    random_model, single_intervention_design, CausalModel, ExperimentDesign, InterventionSpec,
};
use robust_llc::simulate::{
    contaminate, draw_sample, ContaminationSpec, ContaminationTarget, Sample, SampleMetadata,
};

#[derive(Parser, Debug)]
#[command(
    name = "robust-llc",
    version,
    about = "Robust LLC for cyclic linear causal models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random weakly stable model and write it as JSON.
    Generate {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.3)]
        edge_prob: f64,
        #[arg(long, default_value_t = 0.3)]
        conf_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one CSV per experiment, optionally contaminated.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// JSON `{"experiments": [[], [1], ...]}`; single interventions if omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value = "x")]
        target: ContaminationTarget,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit LLC to a directory written by `simulate`.
    Fit {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "scm")]
        backend: Method,
        #[arg(long, default_value_t = 0.3)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Seed of the randomized MCD search.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Model JSON to score the estimate against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the contamination benchmark.
    Bench {
        /// JSON with benchmark configuration fields; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_models: Option<usize>,
        /// Also write per-fit wall-clock times.
        #[arg(long)]
        timings: bool,
    },
    /// Print the breakdown counterexample traces.
    DemoBreakdown,
}

#[derive(Serialize)]
struct SimulateManifest {
    d: usize,
    n: usize,
    seed: u64,
    epsilon: f64,
    target: ContaminationTarget,
    files: Vec<String>,
}

const DESIGN_FILE: &str = "design.json";
const MODEL_FILE: &str = "model.json";

fn sample_file(k: usize) -> String {
    format!("experiment_{k}.csv")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(d: usize, edge_prob: f64, conf_prob: f64, seed: u64, out: &Path) -> Result<()> {
    let mut rng = substream(seed, &[]);
    let model = random_model(d, edge_prob, conf_prob, &mut rng)?;
    write(out, &(model.to_json()? + "\n"))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    model_path: &Path,
    design_path: Option<&Path>,
    n: usize,
    epsilon: f64,
    target: ContaminationTarget,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let model = CausalModel::from_json(&read(model_path)?)?;
    let d = model.d();
    let design = match design_path {
        Some(p) => ExperimentDesign::from_json(d, &read(p)?)?,
        None => single_intervention_design(d),
    };
    let contamination = ContaminationSpec::new(epsilon, target);
    contamination.validate()?;
    let spec = InterventionSpec::standard(d);

    fs::create_dir_all(out)?;
    write(&out.join(MODEL_FILE), &(model.to_json()? + "\n"))?;
    write(&out.join(DESIGN_FILE), &(design.to_json()? + "\n"))?;
    let mut files = vec![MODEL_FILE.to_string(), DESIGN_FILE.to_string()];
    for (k, exp) in design.experiments.iter().enumerate() {
        let mut rng = substream(seed, &[1, k as u64]);
        let mut sample = draw_sample(&model, exp, n, &spec, &mut rng)?;
        let applied =
            epsilon > 0.0 && !(target == ContaminationTarget::C && exp.is_observational());
        if applied {
            let mut rng = substream(seed, &[2, k as u64]);
            sample = contaminate(&sample, &model, &contamination, &mut rng)?;
        }
        let csv = sample_file(k);
        sample.write_csv(&out.join(&csv))?;
        let meta = SampleMetadata {
            d,
            n,
            intervened: exp.one_based(),
            seed,
            contamination: applied.then_some(contamination),
        };
        let sidecar = format!("experiment_{k}.json");
        write(
            &out.join(&sidecar),
            &(serde_json::to_string_pretty(&meta)? + "\n"),
        )?;
        files.push(csv);
        files.push(sidecar);
    }
    let manifest = SimulateManifest {
        d,
        n,
        seed,
        epsilon,
        target,
        files,
    };
    write(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data_dir: &Path,
    method: Method,
    gamma: f64,
    alpha: f64,
    lambda: f64,
    seed: u64,
    out: &Path,
    truth: Option<&Path>,
) -> Result<()> {
    let design_text = read(&data_dir.join(DESIGN_FILE))?;
    let first = data_dir.join(sample_file(0));
    let header = read(&first)?;
    let d = header
        .lines()
        .next()
        .map(|l| l.split(',').count())
        .unwrap_or(0);
    let design = ExperimentDesign::from_json(d, &design_text)?;
    let samples = design
        .experiments
        .iter()
        .enumerate()
        .map(|(k, e)| Sample::read_csv(&data_dir.join(sample_file(k)), e.clone()))
        .collect::<robust_llc::Result<Vec<_>>>()?;

    let mcd = McdConfig {
        alpha,
        seed,
        ..McdConfig::default()
    };
    let backend = match method {
        Method::Scm => Backend::Scm,
        Method::Mcd => Backend::Mcd(mcd),
        Method::Gde => Backend::Gde(GdeConfig {
            gamma,
            mcd,
            ..GdeConfig::default()
        }),
    };
    let estimate = llc_fit(&samples, &design, &backend, lambda)?;
    write(
        out,
        &(serde_json::to_string_pretty(&estimate.document())? + "\n"),
    )?;
    if estimate.diagnostics.conditioning.singular {
        eprintln!("warning: a constraint block is ill conditioned");
    }
    if let Some(path) = truth {
        let model = CausalModel::from_json(&read(path)?)?;
        if model.d() != d {
            bail!("truth model has d = {}, data has d = {d}", model.d());
        }
        let b = rfe(&estimate.b_hat, &model.b).map(|v| v.to_string());
        let s = rfe(&estimate.sigma_e_hat, &model.sigma_e).map(|v| v.to_string());
        println!("RFE_B {}", b.unwrap_or_else(|e| format!("undefined ({e})")));
        println!(
            "RFE_SigmaE {}",
            s.unwrap_or_else(|e| format!("undefined ({e})"))
        );
    }
    Ok(())
}

fn bench(
    config: Option<&Path>,
    out_dir: &Path,
    jobs: usize,
    seed: Option<u64>,
    n_models: Option<usize>,
    timings: bool,
) -> Result<()> {
    let mut cfg: BenchmarkConfig = match config {
        Some(p) => {
            serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(m) = n_models {
        cfg.n_models = m;
    }
    let report = run_benchmark(&cfg, jobs.max(1))?;
    emit_report(&report, out_dir, timings)?;
    for a in &report.aggregates {
        println!(
            "{:<4} eps={:<5} {:<7} median={:.4} mad={:.4} n={}",
            a.estimator.name(),
            a.epsilon,
            a.target.as_str(),
            a.median,
            a.mad,
            a.count
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            d,
            edge_prob,
            conf_prob,
            seed,
            out,
        } => generate(d, edge_prob, conf_prob, seed, &out),
        Command::Simulate {
            model,
            design,
            n,
            epsilon,
            target,
            seed,
            out,
        } => simulate(&model, design.as_deref(), n, epsilon, target, seed, &out),
        Command::Fit {
            data_dir,
            backend,
            gamma,
            alpha,
            lambda,
            seed,
            out,
            truth,
        } => fit(
            &data_dir,
            backend,
            gamma,
            alpha,
            lambda,
            seed,
            &out,
            truth.as_deref(),
        ),
        Command::Bench {
            config,
            out_dir,
            jobs,
            seed,
            n_models,
            timings,
        } => bench(config.as_deref(), &out_dir, jobs, seed, n_models, timings),
        Command::DemoBreakdown => {
            print!("{}", breakdown_trace()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
