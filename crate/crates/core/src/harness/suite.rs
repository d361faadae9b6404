use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{final_window_mean, train, Arm, ExperimentConfig, TrainOutcome, STREAM_LYAPUNOV};
use crate::lyapunov::{lyapunov_spectrum, LyapunovEstimate};
use crate::numerics::RngStream;
use crate::rnn::RnnParams;
use crate::{Error, Result};

/// Outcome of one (arm, gain, lr, seed) run at the selected learning rate.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub arm: Arm,
    pub gain: f64,
    pub lr: f64,
    pub seed: u64,
    /// Batch loss per iteration (NaN after a failure).
    pub curve: Vec<f64>,
    /// Mean loss over the final window.
    pub final_loss: f64,
    pub floss_history: Vec<f64>,
    /// Before training, after flossing (flossing arms only), after training.
    pub lyap_before: Option<LyapunovEstimate>,
    pub lyap_floss: Option<LyapunovEstimate>,
    pub lyap_after: Option<LyapunovEstimate>,
    pub failure: Option<String>,
    /// Trained weights.
    #[serde(skip)]
    pub params: Option<RnnParams>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Final-window loss is finite and at most `threshold`.
    pub fn reached(&self, threshold: f64) -> bool {
        !self.failed() && self.final_loss.is_finite() && self.final_loss <= threshold
    }
}

/// Mean final-window loss per learning rate on the held-out seeds.
#[derive(Debug, Clone, Serialize)]
pub struct LrSelection {
    pub arm: Arm,
    pub gain: f64,
    /// `(lr, score)`; failed runs score `+inf`.
    pub scores: Vec<(f64, f64)>,
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResults {
    pub config: ExperimentConfig,
    pub selections: Vec<LrSelection>,
    pub cells: Vec<CellResult>,
    /// One line per failed run or measurement.
    pub failures: Vec<String>,
}

impl SuiteResults {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self { config, selections: Vec::new(), cells: Vec::new(), failures: Vec::new() }
    }

    pub fn cells_for(&self, arm: Arm, gain: f64) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.arm == arm && c.gain == gain)
    }

    /// Final losses across seeds of an (arm, gain) cell, skipping failed runs.
    pub fn final_losses(&self, arm: Arm, gain: f64) -> Vec<f64> {
        self.cells_for(arm, gain).filter(|c| !c.failed()).map(|c| c.final_loss).collect()
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Smallest learning rate with the lowest finite score.
pub fn pick_lr(scores: &[(f64, f64)]) -> Result<f64> {
    let mut sorted: Vec<(f64, f64)> = scores.iter().copied().filter(|(_, s)| s.is_finite()).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    sorted
        .first()
        .map(|&(lr, _)| lr)
        .ok_or_else(|| Error::AllRunsFailed(format!("no finite score among {} learning rates", scores.len())))
}

fn run_score(out: &Result<TrainOutcome>, frac: f64) -> f64 {
    match out {
        Ok(o) if !o.failed() => final_window_mean(&o.curve, frac),
        _ => f64::INFINITY,
    }
}

/// Trains `arm` at `gain` for every lr in the grid on the held-out seeds and picks the best.
pub fn select_lr(cfg: &ExperimentConfig, arm: Arm, gain: f64) -> Result<LrSelection> {
    let jobs: Vec<(f64, u64)> =
        cfg.lrs.iter().flat_map(|&lr| cfg.lr_seeds().iter().map(move |&s| (lr, s))).collect();
    let outs: Vec<f64> = jobs
        .par_iter()
        .map(|&(lr, seed)| run_score(&train(cfg, arm, gain, lr, seed), cfg.final_window))
        .collect();
    let selection = selection_from(cfg, arm, gain, &jobs, &outs);
    selection.lr.ok_or_else(|| Error::AllRunsFailed(format!("{arm} at gain {gain}")))?;
    Ok(selection)
}

fn selection_from(cfg: &ExperimentConfig, arm: Arm, gain: f64, jobs: &[(f64, u64)], scores: &[f64]) -> LrSelection {
    let per_lr: Vec<(f64, f64)> = cfg
        .lrs
        .iter()
        .map(|&lr| {
            let s: Vec<f64> = jobs.iter().zip(scores).filter(|((l, _), _)| *l == lr).map(|(_, &s)| s).collect();
            (lr, if s.iter().all(|v| v.is_finite()) { super::stats::mean(&s) } else { f64::INFINITY })
        })
        .collect();
    LrSelection { arm, gain, lr: pick_lr(&per_lr).ok(), scores: per_lr }
}

fn measure(cfg: &ExperimentConfig, p: &RnnParams, seed: u64) -> Result<LyapunovEstimate> {
    let mut rng = RngStream::with_stream(seed, STREAM_LYAPUNOV);
    lyapunov_spectrum(p, &cfg.stream(), &cfg.lyapunov, &mut rng)
}

/// Measures Lyapunov exponents around a finished (or failed) training run.
fn finish_cell(
    cfg: &ExperimentConfig,
    (arm, gain, lr, seed): Job,
    trained: Result<TrainOutcome>,
    failures: &mut Vec<String>,
) -> CellResult {
    let tag = format!("{arm} gain={gain} lr={lr} seed={seed}");
    let mut cell = CellResult {
        arm,
        gain,
        lr,
        seed,
        curve: vec![f64::NAN; cfg.iters],
        final_loss: f64::NAN,
        floss_history: Vec::new(),
        lyap_before: None,
        lyap_floss: None,
        lyap_after: None,
        failure: None,
        params: None,
    };
    let out = match trained {
        Ok(o) => o,
        Err(e) => {
            failures.push(format!("{tag}: training: {e}"));
            cell.failure = Some(e.to_string());
            return cell;
        }
    };
    let mut lyap = |phase: &str, p: &RnnParams| match measure(cfg, p, seed) {
        Ok(est) => Some(est),
        Err(e) => {
            failures.push(format!("{tag}: lyapunov {phase}: {e}"));
            None
        }
    };
    cell.lyap_before = lyap("before", &out.initial);
    cell.lyap_floss = out.pretrained.as_ref().and_then(|p| lyap("floss", p));
    if !out.failed() {
        cell.lyap_after = lyap("after", &out.params);
        cell.final_loss = final_window_mean(&out.curve, cfg.final_window);
    } else {
        failures.push(format!("{tag}: training: {}", out.failure.as_deref().unwrap_or("failed")));
    }
    cell.curve = out.curve;
    cell.floss_history = out.floss_history;
    cell.failure = out.failure;
    cell.params = Some(out.params);
    cell
}

type Job = (Arm, f64, f64, u64);

/// Runs every arm × gain × seed at the learning rate with the best mean
/// final-window loss on `lr_seeds` (the reported seeds when empty), with
/// Lyapunov measurements before and after training. Individual failures are
/// collected in `failures`; the call only errors on a bad config.
pub fn run_figure_suite(cfg: &ExperimentConfig) -> Result<SuiteResults> {
    cfg.validate()?;
    pool(cfg)?.install(|| run_suite_inner(cfg))
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn run_suite_inner(cfg: &ExperimentConfig) -> Result<SuiteResults> {
    let arms = cfg.arms();
    let mut results = SuiteResults::empty(cfg.clone());
    let pairs: Vec<(Arm, f64)> = arms.iter().flat_map(|&a| cfg.gains.iter().map(move |&g| (a, g))).collect();

    // Learning-rate selection. With a single lr the grid search is skipped;
    // runs on the reported seeds are kept and reused below.
    let mut chosen: BTreeMap<(Arm, u64), f64> = BTreeMap::new();
    let mut done: BTreeMap<(Arm, u64, u64, u64), Result<TrainOutcome>> = BTreeMap::new();
    if cfg.lrs.len() == 1 {
        for &(arm, gain) in &pairs {
            chosen.insert((arm, gain.to_bits()), cfg.lrs[0]);
        }
    } else {
        let jobs: Vec<Job> = pairs
            .iter()
            .flat_map(|&(a, g)| cfg.lrs.iter().flat_map(move |&lr| cfg.lr_seeds().iter().map(move |&s| (a, g, lr, s))))
            .collect();
        let outs: Vec<Result<TrainOutcome>> = jobs.par_iter().map(|&(a, g, lr, s)| train(cfg, a, g, lr, s)).collect();
        let scores: Vec<f64> = outs.iter().map(|o| run_score(o, cfg.final_window)).collect();
        for &(arm, gain) in &pairs {
            let (sub_jobs, sub_scores): (Vec<(f64, u64)>, Vec<f64>) = jobs
                .iter()
                .zip(&scores)
                .filter(|((a, g, _, _), _)| *a == arm && *g == gain)
                .map(|(&(_, _, lr, s), &score)| ((lr, s), score))
                .unzip();
            let sel = selection_from(cfg, arm, gain, &sub_jobs, &sub_scores);
            match sel.lr {
                Some(lr) => {
                    chosen.insert((arm, gain.to_bits()), lr);
                }
                None => results.failures.push(format!("{arm} gain={gain}: every learning rate failed")),
            }
            log::info!("{arm} gain={gain}: lr scores {:?}", sel.scores);
            results.selections.push(sel);
        }
        for (&(a, g, lr, s), out) in jobs.iter().zip(outs) {
            if chosen.get(&(a, g.to_bits())) == Some(&lr) && cfg.seeds.contains(&s) {
                done.insert((a, g.to_bits(), lr.to_bits(), s), out);
            }
        }
    }

    let jobs: Vec<Job> = pairs
        .iter()
        .filter_map(|&(a, g)| chosen.get(&(a, g.to_bits())).map(|&lr| (a, g, lr)))
        .flat_map(|(a, g, lr)| cfg.seeds.iter().map(move |&s| (a, g, lr, s)))
        .collect();
    let trained: Vec<(Job, Option<Result<TrainOutcome>>)> = jobs
        .iter()
        .map(|&job| (job, done.remove(&(job.0, job.1.to_bits(), job.2.to_bits(), job.3))))
        .collect();
    let main = finish_jobs(cfg, trained);
    results.failures.extend(main.failures);
    results.cells = main.cells;
    Ok(results)
}

/// Runs the given (arm, gain, lr, seed) cells as they are, without learning-rate selection.
pub fn run_cells(cfg: &ExperimentConfig, jobs: &[Job]) -> Result<SuiteResults> {
    cfg.validate()?;
    Ok(pool(cfg)?.install(|| finish_jobs(cfg, jobs.iter().map(|&j| (j, None)).collect())))
}

/// Trains the jobs without an outcome, then measures every cell. Order-stable.
fn finish_jobs(cfg: &ExperimentConfig, jobs: Vec<(Job, Option<Result<TrainOutcome>>)>) -> SuiteResults {
    let mut results = SuiteResults::empty(cfg.clone());
    let cells: Vec<(CellResult, Vec<String>)> = jobs
        .into_par_iter()
        .map(|(job, out)| {
            let (a, g, lr, s) = job;
            let out = out.unwrap_or_else(|| train(cfg, a, g, lr, s));
            let mut failures = Vec::new();
            let cell = finish_cell(cfg, job, out, &mut failures);
            (cell, failures)
        })
        .collect();
    for (cell, failures) in cells {
        results.failures.extend(failures);
        results.cells.push(cell);
    }
    results
}
