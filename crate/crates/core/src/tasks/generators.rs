use super::{Epochs, TaskConfig, TaskKind, Trial, TrialBatch, TrialMeta};
use crate::numerics::{Matrix, RngStream};
use crate::{Error, Result};

fn check(cfg: &TaskConfig, kind: TaskKind) -> Result<()> {
    if cfg.task != kind {
        return Err(Error::Config(format!(
            "config is for {}, generator is {}",
            cfg.task, kind
        )));
    }
    cfg.validate()
}

/// Noise everywhere, the fixation channel (if any) in the last column,
/// decision-epoch mask.
fn blank_trial(cfg: &TaskConfig, rng: &mut RngStream) -> (Matrix, Matrix, Matrix) {
    let (t_len, n_in, n_out) = (cfg.steps, cfg.n_in(), cfg.n_out());
    let mut inputs = Matrix::zeros(t_len, n_in);
    if cfg.noise_std > 0.0 {
        for v in inputs.data_mut() {
            *v = cfg.noise_std * rng.gaussian();
        }
    }
    if cfg.fixation_input {
        for t in 0..cfg.epochs.decision[0] {
            inputs[(t, n_in - 1)] += 1.0;
        }
    }
    let targets = Matrix::zeros(t_len, n_out);
    let mut mask = Matrix::zeros(t_len, n_out);
    for t in Epochs::range(cfg.epochs.decision) {
        mask.row_mut(t).fill(1.0);
    }
    (inputs, targets, mask)
}

fn set_decision_target(cfg: &TaskConfig, targets: &mut Matrix, value: &[f64]) {
    for t in Epochs::range(cfg.epochs.decision) {
        targets.row_mut(t).copy_from_slice(value);
    }
}

/// One Romo trial with the given frequencies.
pub fn romo_trial(cfg: &TaskConfig, f1: f64, f2: f64, rng: &mut RngStream) -> Trial {
    let (mut inputs, mut targets, mask) = blank_trial(cfg, rng);
    for t in Epochs::range(cfg.epochs.stim1) {
        inputs[(t, 0)] += f1;
    }
    for t in Epochs::range(cfg.epochs.stim2) {
        inputs[(t, 0)] += f2;
    }
    let target = if f1 > f2 { 1.0 } else { -1.0 };
    set_decision_target(cfg, &mut targets, &[target]);
    Trial {
        inputs,
        targets,
        mask,
        meta: TrialMeta::Romo { f1, f2 },
    }
}

pub fn gen_romo(cfg: &TaskConfig, rng: &mut RngStream) -> Result<TrialBatch> {
    check(cfg, TaskKind::Romo)?;
    let [lo, hi] = cfg.amplitude;
    let trials = (0..cfg.batch)
        .map(|_| {
            let (f1, f2) = loop {
                let f1 = rng.uniform_range(lo, hi);
                let f2 = rng.uniform_range(lo, hi);
                if (f1 - f2).abs() >= cfg.min_gap {
                    break (f1, f2);
                }
            };
            romo_trial(cfg, f1, f2, rng)
        })
        .collect();
    Ok(TrialBatch {
        task: TaskKind::Romo,
        trials,
    })
}

/// One 2AF trial; channel means are `(coherence, −coherence)` during the stimulus.
pub fn two_af_trial(cfg: &TaskConfig, coherence: f64, rng: &mut RngStream) -> Trial {
    let (mut inputs, mut targets, mask) = blank_trial(cfg, rng);
    for t in Epochs::range(cfg.epochs.stim1) {
        inputs[(t, 0)] += coherence;
        inputs[(t, 1)] -= coherence;
    }
    let target = if coherence > 0.0 { [1.0, 0.0] } else { [0.0, 1.0] };
    set_decision_target(cfg, &mut targets, &target);
    Trial {
        inputs,
        targets,
        mask,
        meta: TrialMeta::TwoAf { coherence },
    }
}

pub fn gen_2af(cfg: &TaskConfig, rng: &mut RngStream) -> Result<TrialBatch> {
    check(cfg, TaskKind::TwoAf)?;
    let [lo, hi] = cfg.amplitude;
    if lo <= 0.0 {
        return Err(Error::Config("2AF coherence magnitude must be positive".into()));
    }
    let trials = (0..cfg.batch)
        .map(|_| {
            let sign = if rng.bernoulli() { 1.0 } else { -1.0 };
            let m = rng.uniform_range(lo, hi);
            two_af_trial(cfg, sign * m, rng)
        })
        .collect();
    Ok(TrialBatch {
        task: TaskKind::TwoAf,
        trials,
    })
}

/// One DMS trial. Symbols are 0 (A) and 1 (B), shown one-hot at `level`.
pub fn dms_trial(cfg: &TaskConfig, sample: usize, test: usize, level: f64, rng: &mut RngStream) -> Trial {
    assert!(sample < 2 && test < 2, "DMS symbols are 0 or 1");
    let (mut inputs, mut targets, mask) = blank_trial(cfg, rng);
    for t in Epochs::range(cfg.epochs.stim1) {
        inputs[(t, sample)] += level;
    }
    for t in Epochs::range(cfg.epochs.stim2) {
        inputs[(t, test)] += level;
    }
    let target = if sample == test { [1.0, 0.0] } else { [0.0, 1.0] };
    set_decision_target(cfg, &mut targets, &target);
    Trial {
        inputs,
        targets,
        mask,
        meta: TrialMeta::Dms { sample, test },
    }
}

pub fn gen_dms(cfg: &TaskConfig, rng: &mut RngStream) -> Result<TrialBatch> {
    check(cfg, TaskKind::Dms)?;
    let [lo, hi] = cfg.amplitude;
    let trials = (0..cfg.batch)
        .map(|_| {
            let sample = rng.below(2);
            let test = rng.below(2);
            let level = rng.uniform_range(lo, hi);
            dms_trial(cfg, sample, test, level, rng)
        })
        .collect();
    Ok(TrialBatch {
        task: TaskKind::Dms,
        trials,
    })
}
