//! CSV, JSON and SVG emission. CSV rows are written in report order, so equal inputs produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::experiments::{AblationReport, SyntheticReport, TcepRun};
use crate::svg;

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn finite_or_empty(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Pretty JSON. Non-finite floats serialize as `null`.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn synthetic_csv(report: &SyntheticReport, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mechanism", "noise", "method", "trials", "correct", "errors", "accuracy", "std"])?;
    for c in &report.cells {
        w.write_record([
            c.mechanism.to_string(),
            c.noise.to_string(),
            c.method.to_string(),
            c.trials.to_string(),
            c.correct.to_string(),
            c.errors.to_string(),
            finite_or_empty(c.accuracy),
            finite_or_empty(c.std),
        ])?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn ablation_csv(report: &AblationReport, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mechanism", "noise", "discard", "trials", "correct", "accuracy", "std"])?;
    for r in &report.rows {
        w.write_record([
            r.mechanism.to_string(),
            r.noise.to_string(),
            r.discard.to_string(),
            r.trials.to_string(),
            r.correct.to_string(),
            finite_or_empty(r.accuracy),
            finite_or_empty(r.std),
        ])?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn tcep_csv(run: &TcepRun, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["pair_id", "method", "score_xy", "score_yx", "decision", "correct"])?;
    for r in &run.report.records {
        w.write_record([
            r.pair_id.to_string(),
            r.method.to_string(),
            finite_or_empty(r.score_xy),
            finite_or_empty(r.score_yx),
            r.decision.to_string(),
            u8::from(r.correct).to_string(),
        ])?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn ablation_svg(report: &AblationReport) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in &report.rows {
        let name = format!("{}/{}", r.mechanism.label(), r.noise.label());
        match series.last_mut() {
            Some((n, pts)) if *n == name => pts.push((r.discard as f64, r.accuracy)),
            _ => series.push((name, vec![(r.discard as f64, r.accuracy)])),
        }
    }
    svg::line_chart(
        "KIIM accuracy by number of discarded eigenvalues",
        "discarded leading eigenvalues d",
        "accuracy",
        &series,
    )
}

pub fn tcep_svg(run: &TcepRun) -> String {
    let bars: Vec<(String, f64)> = run
        .report
        .accuracies
        .iter()
        .map(|a| (a.method.to_string(), a.accuracy))
        .collect();
    svg::bar_chart(
        &format!("Cause-effect pairs: accuracy over {} pairs", run.report.evaluated),
        "accuracy",
        &bars,
    )
}

/// Paths of the files a command wrote.
#[derive(Debug, Clone)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

pub fn write_synthetic(report: &SyntheticReport, dir: &Path) -> CliResult<Written> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let csv = dir.join("synthetic.csv");
    let json = dir.join("synthetic.json");
    synthetic_csv(report, &csv)?;
    write_text(&json, &to_json(report)?)?;
    Ok(Written { files: vec![csv, json] })
}

pub fn write_ablation(report: &AblationReport, dir: &Path) -> CliResult<Written> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let csv = dir.join("ablation.csv");
    let json = dir.join("ablation.json");
    let chart = dir.join("ablation.svg");
    ablation_csv(report, &csv)?;
    write_text(&json, &to_json(report)?)?;
    write_text(&chart, &ablation_svg(report))?;
    Ok(Written {
        files: vec![csv, json, chart],
    })
}

pub fn write_tcep(run: &TcepRun, dir: &Path) -> CliResult<Written> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let csv = dir.join("tcep_pairs.csv");
    let json = dir.join("tcep_summary.json");
    let chart = dir.join("tcep_accuracy.svg");
    tcep_csv(run, &csv)?;
    write_text(&json, &to_json(run)?)?;
    write_text(&chart, &tcep_svg(run))?;
    Ok(Written {
        files: vec![csv, json, chart],
    })
}
