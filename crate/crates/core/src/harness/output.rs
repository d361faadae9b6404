use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::plot::{render_curves_svg, render_lyapunov_svg};
use super::stats;
use super::SuiteResults;
use crate::lyapunov::LyapunovEstimate;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub rule: String,
    pub gain: f64,
    pub lr: f64,
    pub seed: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovRow {
    pub phase: String,
    pub rule: String,
    pub gain: f64,
    pub seed: u64,
    pub horizon: usize,
    pub lambdas: Vec<f64>,
}

/// Mean and sample std over seeds of one (rule, gain, lr, iteration) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub rule: String,
    pub gain: f64,
    pub lr: f64,
    pub iteration: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Serialize)]
struct FlossRow<'a> {
    iteration: usize,
    rule: &'a str,
    gain: f64,
    seed: u64,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    rule: String,
    gain: f64,
    lr: f64,
    seed: u64,
    final_loss: f64,
    lambda_before: f64,
    lambda_floss: f64,
    lambda_after: f64,
    failed: bool,
}

#[derive(Debug, Serialize)]
struct LrRow {
    rule: String,
    gain: f64,
    lr: f64,
    score: f64,
    selected: bool,
}

pub fn curve_rows(results: &SuiteResults) -> Vec<CurveRow> {
    results
        .cells
        .iter()
        .flat_map(|c| {
            let rule = c.arm.label();
            c.curve.iter().enumerate().map(move |(i, &loss)| CurveRow {
                iteration: i,
                rule: rule.clone(),
                gain: c.gain,
                lr: c.lr,
                seed: c.seed,
                loss,
            })
        })
        .collect()
}

pub fn lyapunov_rows(results: &SuiteResults) -> Vec<LyapunovRow> {
    let mut rows = Vec::new();
    for c in &results.cells {
        let phases = [("before", &c.lyap_before), ("floss", &c.lyap_floss), ("after", &c.lyap_after)];
        for (phase, est) in phases {
            if let Some(est) = est {
                rows.push(LyapunovRow {
                    phase: phase.to_string(),
                    rule: c.arm.label(),
                    gain: c.gain,
                    seed: c.seed,
                    horizon: est.total_steps,
                    lambdas: est.lambdas.clone(),
                });
            }
        }
    }
    rows
}

/// Groups by (rule, gain, lr, iteration) in first-seen order, skipping NaN losses.
pub fn aggregate_curves(rows: &[CurveRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((String, u64, u64, usize), Vec<f64>)> = Vec::new();
    let mut index: BTreeMap<(String, u64, u64, usize), usize> = BTreeMap::new();
    for r in rows {
        let key = (r.rule.clone(), r.gain.to_bits(), r.lr.to_bits(), r.iteration);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        if !r.loss.is_nan() {
            groups[slot].1.push(r.loss);
        }
    }
    groups
        .into_iter()
        .map(|((rule, gain, lr, iteration), losses)| AggregateRow {
            rule,
            gain: f64::from_bits(gain),
            lr: f64::from_bits(lr),
            iteration,
            n: losses.len(),
            mean: stats::mean(&losses),
            std: stats::std_dev(&losses),
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(w: W, rows: &[CurveRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(["iteration", "rule", "gain", "lr", "seed", "loss"])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_curves_csv<R: Read>(r: R) -> Result<Vec<CurveRow>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_lyapunov_csv<W: Write>(w: W, rows: &[LyapunovRow], k: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["phase", "rule", "gain", "seed", "k", "horizon"].map(String::from).to_vec();
    header.extend((1..=k).map(|i| format!("lambda_{i}")));
    wr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.phase.clone(),
            r.rule.clone(),
            r.gain.to_string(),
            r.seed.to_string(),
            r.lambdas.len().to_string(),
            r.horizon.to_string(),
        ];
        rec.extend((0..k).map(|i| r.lambdas.get(i).map_or(String::new(), f64::to_string)));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_lyapunov_csv<R: Read>(r: R) -> Result<Vec<LyapunovRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("lyapunov.csv row has {} fields", rec.len())));
        let num = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|_| Error::Format(format!("bad number {:?}", rec.get(i))))
        };
        let k = num(4)? as usize;
        rows.push(LyapunovRow {
            phase: field(0)?.to_string(),
            rule: field(1)?.to_string(),
            gain: num(2)?,
            seed: num(3)? as u64,
            horizon: num(5)? as usize,
            lambdas: (0..k).map(|i| num(6 + i)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

fn lambda_or_nan(est: &Option<LyapunovEstimate>) -> f64 {
    est.as_ref().map_or(f64::NAN, |e| e.max())
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<fs::File> {
    let path = dir.join(name);
    let f = fs::File::create(&path)?;
    written.push(path);
    Ok(f)
}

fn write_svgs(dir: &Path, curves: &[CurveRow], lyap: &[LyapunovRow], written: &mut Vec<PathBuf>) -> Result<()> {
    let aggs = aggregate_curves(curves);
    let mut rules: Vec<&str> = Vec::new();
    for a in &aggs {
        if !rules.contains(&a.rule.as_str()) {
            rules.push(&a.rule);
        }
    }
    for rule in rules {
        let svg = render_curves_svg(&aggs, rule);
        create(dir, &format!("curves_{}.svg", rule.replace('+', "_")), written)?.write_all(svg.as_bytes())?;
    }
    if !lyap.is_empty() {
        create(dir, "lyapunov.svg", written)?.write_all(render_lyapunov_svg(lyap).as_bytes())?;
    }
    Ok(())
}

/// Regenerates the SVG plots from the CSVs in `dir`.
pub fn replot(dir: &Path) -> Result<Vec<PathBuf>> {
    let curves = read_curves_csv(fs::File::open(dir.join("curves.csv"))?)?;
    let lyap = match fs::File::open(dir.join("lyapunov.csv")) {
        Ok(f) => read_lyapunov_csv(f)?,
        Err(_) => Vec::new(),
    };
    let mut written = Vec::new();
    write_svgs(dir, &curves, &lyap, &mut written)?;
    Ok(written)
}

/// Writes every result file into `dir` (created if missing) and returns their paths.
pub fn emit_outputs(results: &SuiteResults, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &results.config;
    let mut written = Vec::new();

    let curves = curve_rows(results);
    write_curves_csv(create(dir, "curves.csv", &mut written)?, &curves)?;

    let lyap = lyapunov_rows(results);
    write_lyapunov_csv(create(dir, "lyapunov.csv", &mut written)?, &lyap, cfg.lyapunov.k)?;

    let mut wr = csv::Writer::from_writer(create(dir, "floss.csv", &mut written)?);
    if results.cells.iter().all(|c| c.floss_history.is_empty()) {
        wr.write_record(["iteration", "rule", "gain", "seed", "loss"])?;
    }
    for c in &results.cells {
        let rule = c.arm.label();
        for (i, &loss) in c.floss_history.iter().enumerate() {
            wr.serialize(FlossRow { iteration: i, rule: &rule, gain: c.gain, seed: c.seed, loss })?;
        }
    }
    wr.flush()?;

    let mut wr = csv::Writer::from_writer(create(dir, "summary.csv", &mut written)?);
    if results.cells.is_empty() {
        wr.write_record([
            "rule", "gain", "lr", "seed", "final_loss", "lambda_before", "lambda_floss", "lambda_after", "failed",
        ])?;
    }
    for c in &results.cells {
        wr.serialize(SummaryRow {
            rule: c.arm.label(),
            gain: c.gain,
            lr: c.lr,
            seed: c.seed,
            final_loss: c.final_loss,
            lambda_before: lambda_or_nan(&c.lyap_before),
            lambda_floss: lambda_or_nan(&c.lyap_floss),
            lambda_after: lambda_or_nan(&c.lyap_after),
            failed: c.failed(),
        })?;
    }
    wr.flush()?;

    let mut wr = csv::Writer::from_writer(create(dir, "lr_selection.csv", &mut written)?);
    if results.selections.is_empty() {
        wr.write_record(["rule", "gain", "lr", "score", "selected"])?;
    }
    for s in &results.selections {
        for &(lr, score) in &s.scores {
            wr.serialize(LrRow { rule: s.arm.label(), gain: s.gain, lr, score, selected: s.lr == Some(lr) })?;
        }
    }
    wr.flush()?;

    if cfg.seeds.len() >= 2 {
        let mut wr = csv::Writer::from_writer(create(dir, "aggregates.csv", &mut written)?);
        let aggs = aggregate_curves(&curves);
        if aggs.is_empty() {
            wr.write_record(["rule", "gain", "lr", "iteration", "n", "mean", "std"])?;
        }
        for a in aggs {
            wr.serialize(a)?;
        }
        wr.flush()?;
    }

    serde_json::to_writer_pretty(create(dir, "config.json", &mut written)?, cfg)?;
    write_svgs(dir, &curves, &lyap, &mut written)?;

    let manifest_path = dir.join("manifest.json");
    let files: Vec<String> = written
        .iter()
        .chain(std::iter::once(&manifest_path))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = json!({
        "name": cfg.name,
        "config_digest": cfg.digest(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "cells": results.cells.len(),
        "failed_cells": results.cells.iter().filter(|c| c.failed()).count(),
        "partial": results.is_partial(),
        "failures": results.failures,
        "files": files,
    });
    let mut f = fs::File::create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    written.push(manifest_path);
    Ok(written)
}
