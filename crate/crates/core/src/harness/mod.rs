//! Experiment orchestration: training runs, learning-rate selection, the
//! gain × seed sweep with before/after Lyapunov measurements, and result files.
//!
//! Every run draws from four independent streams of its seed (initial weights,
//! training batches, flossing rollouts, Lyapunov probes), so the batches seen
//! by a seed do not depend on the gain, learning rate, or flossing settings.

mod output;
mod plot;
pub mod stats;
mod suite;
mod train;

pub use output::{
    aggregate_curves, curve_rows, emit_outputs, lyapunov_rows, read_curves_csv, read_lyapunov_csv, replot,
    write_curves_csv, AggregateRow, CurveRow, LyapunovRow,
};
pub use plot::{render_curves_svg, render_lyapunov_svg};
pub use suite::{pick_lr, run_cells, run_figure_suite, select_lr, CellResult, LrSelection, SuiteResults};
pub use train::{train, TrainOutcome};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::flossing::FlossConfig;
use crate::learning::{Rule, TraceMode, DEFAULT_CLIP_NORM};
use crate::lyapunov::{InputStream, LyapunovOptions};
use crate::rnn::ArchConfig;
use crate::tasks::{TaskConfig, TaskKind};
use crate::{Error, Result};

/// Learning-rate grid used when a config does not give one.
pub const DEFAULT_LR_GRID: [f64; 4] = [1e-4, 3e-4, 1e-3, 3e-3];

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_DATA: u64 = 2;
pub(crate) const STREAM_FLOSS: u64 = 3;
pub(crate) const STREAM_LYAPUNOV: u64 = 4;

/// A training recipe: a gradient rule, optionally preceded by flossing pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arm {
    pub rule: Rule,
    pub floss: bool,
}

impl Arm {
    pub const fn plain(rule: Rule) -> Self {
        Self { rule, floss: false }
    }

    pub fn label(&self) -> String {
        if self.floss {
            format!("{}+floss", self.rule)
        } else {
            self.rule.to_string()
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_suffix("+floss") {
            Some(rule) => Ok(Self { rule: rule.parse()?, floss: true }),
            None => Ok(Self::plain(s.parse()?)),
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

fn task_or_name<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TaskConfig, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Spec {
        Name(TaskKind),
        Full(TaskConfig),
    }
    Ok(match Spec::deserialize(d)? {
        Spec::Name(kind) => TaskConfig::defaults(kind),
        Spec::Full(cfg) => cfg,
    })
}

fn default_trace() -> TraceMode {
    TraceMode::Diagonal
}

fn default_clip() -> f64 {
    DEFAULT_CLIP_NORM
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn default_final_window() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// A task name (`"romo"`) for its defaults, or a full task object.
    #[serde(deserialize_with = "task_or_name")]
    pub task: TaskConfig,
    /// Hidden units.
    pub n: usize,
    #[serde(default = "crate::rnn::default_alpha")]
    pub alpha: f64,
    pub rules: Vec<Rule>,
    #[serde(default = "default_trace")]
    pub trace: TraceMode,
    pub gains: Vec<f64>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seeds used only for learning-rate selection. Empty means "use `seeds`".
    #[serde(default)]
    pub lr_seeds: Vec<u64>,
    pub iters: usize,
    pub batch: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Fraction of iterations at the end of a run averaged into its final loss.
    #[serde(default = "default_final_window")]
    pub final_window: f64,
    /// Adds an `eprop+floss` arm when present.
    #[serde(default)]
    pub floss: Option<FlossConfig>,
    #[serde(default)]
    pub lyapunov: LyapunovOptions,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `task`: 64 units, batch 32, five seeds, the
    /// standard learning-rate grid, 3000 iterations.
    pub fn desk(task: TaskKind) -> Self {
        Self::preset(&format!("desk-{task}")).expect("bundled preset is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A bundled config by name: `desk-romo`, `desk-2af`, `desk-dms`, `smoke`.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "desk-romo" => include_str!("../../defaults/experiments/desk-romo.json"),
            "desk-2af" => include_str!("../../defaults/experiments/desk-2af.json"),
            "desk-dms" => include_str!("../../defaults/experiments/desk-dms.json"),
            "smoke" => include_str!("../../defaults/experiments/smoke.json"),
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        };
        Self::from_json(text)
    }

    /// Same experiment on another task with that task's defaults and this batch size.
    pub fn with_task(mut self, task: TaskKind) -> Self {
        self.task = TaskConfig::defaults(task);
        self.name = format!("{}-{task}", self.name.split('-').next().unwrap_or("run"));
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.arch().validate()?;
        if self.gains.is_empty() || self.lrs.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("gains, lrs and seeds must be non-empty".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("at least one rule is required".into()));
        }
        if self.iters == 0 || self.batch == 0 {
            return Err(Error::Config("iters and batch must be at least 1".into()));
        }
        if self.gains.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config(format!("invalid gains {:?}", self.gains)));
        }
        if self.lrs.iter().any(|lr| !(*lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("invalid learning rates {:?}", self.lrs)));
        }
        if !(self.final_window > 0.0 && self.final_window <= 1.0) {
            return Err(Error::Config(format!("final_window {} outside (0, 1]", self.final_window)));
        }
        if let Some(f) = &self.floss {
            f.validate(self.n)?;
        }
        self.lyapunov.validate(self.n)?;
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::new(self.n, self.task.n_in(), self.task.n_out(), self.alpha)
    }

    /// Task config with this experiment's batch size.
    pub fn task_config(&self) -> TaskConfig {
        self.task.clone().with_batch(self.batch)
    }

    /// Task-driven input stream used by flossing and Lyapunov probes.
    pub fn stream(&self) -> InputStream {
        InputStream::Task { task: self.task_config() }
    }

    pub fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self.rules.iter().map(|&r| Arm::plain(r)).collect();
        if self.floss.is_some() {
            arms.push(Arm { rule: Rule::Eprop, floss: true });
        }
        arms
    }

    pub fn lr_seeds(&self) -> &[u64] {
        if self.lr_seeds.is_empty() {
            &self.seeds
        } else {
            &self.lr_seeds
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON (without `out` and `workers`).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }
}

/// Mean of the last `frac` of a curve (at least one point); NaN when empty.
pub fn final_window_mean(curve: &[f64], frac: f64) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    let w = ((curve.len() as f64 * frac).ceil() as usize).clamp(1, curve.len());
    stats::mean(&curve[curve.len() - w..])
}
