use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BenchmarkConfig, BenchmarkReport, Record, RecordFlag, Target};
use crate::covest::Method;
use crate::error::{Error, Result};

/// RFE of the trivial zero estimate; drawn as a horizontal guide in plots.
pub const PLOT_REFERENCE_LINE: f64 = 1.0;

#[derive(Serialize)]
struct PlotMeta {
    source: &'static str,
    x: &'static str,
    y: &'static str,
    facet: &'static str,
    group: &'static str,
    y_scale: &'static str,
    reference_line: f64,
    spread: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a BenchmarkConfig,
    records: usize,
    flagged: usize,
    files: Vec<&'static str>,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:?}")
    }
}

/// Writes the benchmark tables into `dir`. Everything except `timings.csv`
/// is a pure function of the configuration.
pub fn emit_report(report: &BenchmarkReport, dir: &Path, timings: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("records.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "model_id",
        "estimator",
        "epsilon",
        "rfe_b",
        "rfe_sigma_e",
        "flag",
    ])?;
    for r in &report.records {
        w.write_record([
            r.model_id.to_string(),
            r.estimator.to_string(),
            fmt(r.epsilon),
            fmt(r.rfe_b),
            fmt(r.rfe_sigma_e),
            r.flag.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("aggregates.csv");
    let mut w = writer(&path)?;
    w.write_record(["estimator", "epsilon", "target", "median", "mad", "count"])?;
    for a in &report.aggregates {
        w.write_record([
            a.estimator.to_string(),
            fmt(a.epsilon),
            a.target.as_str().to_string(),
            fmt(a.median),
            fmt(a.mad),
            a.count.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("pvalues.csv");
    let mut w = writer(&path)?;
    w.write_record(["epsilon", "target", "first", "second", "n_pairs", "p_value"])?;
    for p in &report.pvalues {
        w.write_record([
            fmt(p.epsilon),
            p.target.as_str().to_string(),
            p.first.to_string(),
            p.second.to_string(),
            p.n_pairs.to_string(),
            fmt(p.p_value),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("boxplot.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "target",
        "epsilon",
        "estimator",
        "model_id",
        "rfe",
        "log10_rfe",
    ])?;
    for target in Target::ALL {
        for r in &report.records {
            let v = target.value(r);
            if !(v.is_finite() && v > 0.0) {
                continue;
            }
            w.write_record([
                target.as_str().to_string(),
                fmt(r.epsilon),
                r.estimator.to_string(),
                r.model_id.to_string(),
                fmt(v),
                fmt(v.log10()),
            ])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("plot_meta.json");
    let meta = PlotMeta {
        source: "boxplot.csv",
        x: "epsilon",
        y: "rfe",
        facet: "target",
        group: "estimator",
        y_scale: "log10",
        reference_line: PLOT_REFERENCE_LINE,
        spread: "median and unscaled MAD",
    };
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")?;
    written.push(path);

    let mut files = vec![
        "records.csv",
        "aggregates.csv",
        "pvalues.csv",
        "boxplot.csv",
        "plot_meta.json",
    ];
    if timings {
        let path = dir.join("timings.csv");
        let mut w = writer(&path)?;
        w.write_record(["model_id", "estimator", "epsilon", "runtime_secs"])?;
        for r in &report.records {
            w.write_record([
                r.model_id.to_string(),
                r.estimator.to_string(),
                fmt(r.epsilon),
                fmt(r.runtime_secs),
            ])?;
        }
        w.flush()?;
        written.push(path);
        files.push("timings.csv");
    }

    let path = dir.join("manifest.json");
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: &report.config,
        records: report.records.len(),
        flagged: report
            .records
            .iter()
            .filter(|r| r.flag != RecordFlag::Ok)
            .count(),
        files,
    };
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// Parses a `records.csv` written by [`emit_report`]. Runtimes are not
/// stored there and come back as zero.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "records row has {} fields, expected 6",
                row.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("field {:?}: {e}", &row[i])))
        };
        out.push(Record {
            model_id: row[0]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("model_id {:?}: {e}", &row[0])))?,
            estimator: row[1].parse::<Method>()?,
            epsilon: num(2)?,
            rfe_b: num(3)?,
            rfe_sigma_e: num(4)?,
            runtime_secs: 0.0,
            flag: row[5].parse()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{aggregate, pairwise_tests};

    fn report(records: Vec<Record>, epsilons: Vec<f64>) -> BenchmarkReport {
        let config = BenchmarkConfig {
            epsilons,
            ..BenchmarkConfig::default()
        };
        BenchmarkReport {
            aggregates: aggregate(&records),
            pvalues: pairwise_tests(&records),
            config,
            records,
        }
    }

    fn record(id: usize, m: Method, b: f64) -> Record {
        Record {
            model_id: id,
            estimator: m,
            epsilon: 0.1,
            rfe_b: b,
            rfe_sigma_e: b * 1.7 + 1e-13,
            runtime_secs: 0.25,
            flag: if b.is_nan() {
                RecordFlag::FitFailed
            } else {
                RecordFlag::Ok
            },
        }
    }

    #[test]
    fn empty_grid_gives_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report(Vec::new(), Vec::new()), dir.path(), false).unwrap();
        let agg = fs::read_to_string(dir.path().join("aggregates.csv")).unwrap();
        assert_eq!(agg, "estimator,epsilon,target,median,mad,count\n");
        assert!(!dir.path().join("timings.csv").exists());
    }

    #[test]
    fn records_round_trip() {
        let records: Vec<Record> = (0..8)
            .flat_map(|i| {
                let x = 0.1 + i as f64 / 7.0;
                [
                    record(i, Method::Scm, x * std::f64::consts::PI),
                    record(i, Method::Gde, if i == 3 { f64::NAN } else { x.sqrt() }),
                ]
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report(records.clone(), vec![0.1]), dir.path(), true).unwrap();
        let back = read_records(&dir.path().join("records.csv")).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(
                (a.model_id, a.estimator, a.flag),
                (b.model_id, b.estimator, b.flag)
            );
            for (x, y) in [(a.rfe_b, b.rfe_b), (a.rfe_sigma_e, b.rfe_sigma_e)] {
                assert!(x.is_nan() && y.is_nan() || (x - y).abs() <= 1e-12);
            }
        }
        assert!(dir.path().join("timings.csv").exists());
        let boxplot = fs::read_to_string(dir.path().join("boxplot.csv")).unwrap();
        assert_eq!(boxplot.lines().count(), 1 + 2 * 15);
    }

    #[test]
    fn plot_meta_marks_reference_line() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(
            &report(vec![record(0, Method::Scm, 0.5)], vec![0.1]),
            dir.path(),
            false,
        )
        .unwrap();
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("plot_meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["reference_line"], 1.0);
        assert_eq!(meta["y_scale"], "log10");
    }
}
