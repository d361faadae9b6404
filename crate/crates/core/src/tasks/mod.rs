//! Native trial generators for three cognitive tasks.
//!
//! Every trial is split into five contiguous epochs (fixation, stimulus 1,
//! delay, stimulus 2, decision). Targets are supervised with MSE and the loss
//! mask covers exactly the decision epoch.
//!
//! - Romo: scalar `f1` then `f2`; target `+1` if `f1 > f2`, else `−1`.
//! - 2AF: two evidence channels with means `(c, −c)` plus noise; one-hot target
//!   on the channel with the larger mean. Stimulus 2 is empty.
//! - DMS: sample symbol then test symbol, each one-hot on two channels; one-hot
//!   target `[match, non-match]`.

mod export;
mod generators;

pub use export::{read_batch, write_batch, BATCH_MAGIC};
pub use generators::{dms_trial, gen_2af, gen_dms, gen_romo, romo_trial, two_af_trial};

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, RngStream};
use crate::{Error, Result};

/// Versioned task defaults.
pub const DEFAULTS_JSON: &str = include_str!("../../defaults/tasks.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "romo")]
    Romo,
    #[serde(rename = "2af")]
    TwoAf,
    #[serde(rename = "dms")]
    Dms,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Romo, TaskKind::TwoAf, TaskKind::Dms];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Romo => "romo",
            TaskKind::TwoAf => "2af",
            TaskKind::Dms => "dms",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "romo" => Ok(TaskKind::Romo),
            "2af" | "two_af" | "perceptual" => Ok(TaskKind::TwoAf),
            "dms" => Ok(TaskKind::Dms),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Half-open `[start, end)` step ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epochs {
    pub fixation: [usize; 2],
    pub stim1: [usize; 2],
    pub delay: [usize; 2],
    pub stim2: [usize; 2],
    pub decision: [usize; 2],
}

impl Epochs {
    /// Contiguous epochs from durations.
    pub fn from_durations(fixation: usize, stim1: usize, delay: usize, stim2: usize, decision: usize) -> Self {
        let mut at = 0;
        let mut next = |d: usize| {
            let e = [at, at + d];
            at += d;
            e
        };
        Self {
            fixation: next(fixation),
            stim1: next(stim1),
            delay: next(delay),
            stim2: next(stim2),
            decision: next(decision),
        }
    }

    fn ordered(&self) -> [(&'static str, [usize; 2]); 5] {
        [
            ("fixation", self.fixation),
            ("stim1", self.stim1),
            ("delay", self.delay),
            ("stim2", self.stim2),
            ("decision", self.decision),
        ]
    }

    pub fn range(e: [usize; 2]) -> Range<usize> {
        e[0]..e[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub steps: usize,
    pub epochs: Epochs,
    /// `[min, max]` stimulus amplitude: Romo frequencies, 2AF coherence magnitude, DMS symbol level.
    pub amplitude: [f64; 2],
    pub noise_std: f64,
    pub batch: usize,
    /// Minimum `|f1 − f2|` for Romo.
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    /// Adds an input channel that is 1 before the decision epoch and 0 during it.
    #[serde(default)]
    pub fixation_input: bool,
}

fn default_min_gap() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
struct DefaultsFile {
    version: u32,
    tasks: BTreeMap<String, TaskConfig>,
}

impl TaskConfig {
    /// Built-in defaults for `task`, parsed from [`DEFAULTS_JSON`].
    pub fn defaults(task: TaskKind) -> Self {
        let file: DefaultsFile =
            serde_json::from_str(DEFAULTS_JSON).expect("bundled task defaults parse");
        debug_assert_eq!(file.version, 1);
        let cfg = file
            .tasks
            .get(task.name())
            .cloned()
            .expect("bundled defaults cover every task");
        debug_assert_eq!(cfg.task, task);
        cfg
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn n_in(&self) -> usize {
        let base = match self.task {
            TaskKind::Romo => 1,
            TaskKind::TwoAf | TaskKind::Dms => 2,
        };
        base + usize::from(self.fixation_input)
    }

    pub fn n_out(&self) -> usize {
        match self.task {
            TaskKind::Romo => 1,
            TaskKind::TwoAf | TaskKind::Dms => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.epochs.ordered();
        let mut expected_start = 0;
        for (name, [start, end]) in ordered {
            if start > end {
                return Err(Error::Config(format!("epoch {name} has start {start} > end {end}")));
            }
            if start < expected_start {
                return Err(Error::Config(format!(
                    "epoch {name} starting at {start} overlaps the previous epoch ending at {expected_start}"
                )));
            }
            if start > expected_start {
                return Err(Error::Config(format!(
                    "gap before epoch {name}: steps {expected_start}..{start} are unassigned"
                )));
            }
            expected_start = end;
        }
        if expected_start != self.steps {
            return Err(Error::Config(format!(
                "epochs cover 0..{expected_start} but the trial has {} steps",
                self.steps
            )));
        }
        let nonempty = |e: [usize; 2], what: &str| {
            if e[1] > e[0] {
                Ok(())
            } else {
                Err(Error::Config(format!("{} epoch must be non-empty for {}", what, self.task)))
            }
        };
        nonempty(self.epochs.stim1, "stim1")?;
        nonempty(self.epochs.decision, "decision")?;
        if matches!(self.task, TaskKind::Romo | TaskKind::Dms) {
            nonempty(self.epochs.stim2, "stim2")?;
        }
        let [lo, hi] = self.amplitude;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid amplitude range {:?}", self.amplitude)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("invalid noise std {}", self.noise_std)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.task == TaskKind::Romo && hi - lo <= self.min_gap {
            return Err(Error::Config(format!(
                "Romo amplitude range {:?} cannot honour min gap {}",
                self.amplitude, self.min_gap
            )));
        }
        Ok(())
    }
}

/// Per-trial labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TrialMeta {
    Romo { f1: f64, f2: f64 },
    TwoAf { coherence: f64 },
    Dms { sample: usize, test: usize },
}

impl TrialMeta {
    /// Index of the correct response: Romo 0 ⇔ `f1 > f2`; 2AF 0 ⇔ channel 1;
    /// DMS 0 ⇔ match.
    pub fn choice(&self) -> usize {
        match *self {
            TrialMeta::Romo { f1, f2 } => usize::from(f1 <= f2),
            TrialMeta::TwoAf { coherence } => usize::from(coherence <= 0.0),
            TrialMeta::Dms { sample, test } => usize::from(sample != test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// `T × N_in`
    pub inputs: Matrix,
    /// `T × N_out`
    pub targets: Matrix,
    /// `T × N_out`, entries in {0, 1}
    pub mask: Matrix,
    pub meta: TrialMeta,
}

impl Trial {
    pub fn steps(&self) -> usize {
        self.inputs.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub task: TaskKind,
    pub trials: Vec<Trial>,
}

impl TrialBatch {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.trials.first().map_or(0, Trial::steps)
    }

    pub fn n_in(&self) -> usize {
        self.trials.first().map_or(0, |t| t.inputs.cols())
    }

    pub fn n_out(&self) -> usize {
        self.trials.first().map_or(0, |t| t.targets.cols())
    }
}

/// Dispatches on `cfg.task`.
pub fn generate(cfg: &TaskConfig, rng: &mut RngStream) -> Result<TrialBatch> {
    match cfg.task {
        TaskKind::Romo => gen_romo(cfg, rng),
        TaskKind::TwoAf => gen_2af(cfg, rng),
        TaskKind::Dms => gen_dms(cfg, rng),
    }
}
