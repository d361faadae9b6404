use super::{Arm, ExperimentConfig, STREAM_DATA, STREAM_FLOSS, STREAM_INIT};
use crate::flossing::pretrain_floss;
use crate::learning::{compute_gradients, AdamState};
use crate::numerics::RngStream;
use crate::rnn::{init_params, RnnParams};
use crate::tasks::generate;
use crate::Result;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: RnnParams,
    /// Weights after flossing pretraining, if the arm flosses.
    pub pretrained: Option<RnnParams>,
    pub params: RnnParams,
    /// Training-batch loss at each iteration, before that iteration's update.
    /// Padded with NaN after a failure so it always has `iters` entries.
    pub curve: Vec<f64>,
    pub floss_history: Vec<f64>,
    /// Iterations whose forward pass or gradient flagged divergence.
    pub diverged_iters: usize,
    pub failure: Option<String>,
}

impl TrainOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Initializes, optionally flosses, then runs `cfg.iters` Adam iterations of `arm.rule`.
pub fn train(cfg: &ExperimentConfig, arm: Arm, gain: f64, lr: f64, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = cfg.task_config();
    let initial = init_params(cfg.arch(), gain, &mut RngStream::with_stream(seed, STREAM_INIT))?;
    let mut params = initial.clone();

    let mut pretrained = None;
    let mut floss_history = Vec::new();
    if arm.floss {
        if let Some(fc) = &cfg.floss {
            let mut rng = RngStream::with_stream(seed, STREAM_FLOSS);
            let report = pretrain_floss(&params, fc, &cfg.stream(), &mut rng)?;
            params = report.params;
            floss_history = report.history;
            pretrained = Some(params.clone());
        }
    }

    let mut adam = AdamState::new(&params);
    let mut data_rng = RngStream::with_stream(seed, STREAM_DATA);
    let mut curve = Vec::with_capacity(cfg.iters);
    let mut diverged_iters = 0;
    let mut failure = None;
    for iter in 0..cfg.iters {
        let batch = generate(&task, &mut data_rng)?;
        let lg = compute_gradients(arm.rule, &params, &batch, cfg.trace)?;
        curve.push(lg.loss);
        diverged_iters += usize::from(lg.diverged);
        if !lg.loss.is_finite() || !lg.grads.is_finite() {
            failure = Some(format!("non-finite loss or gradient at iteration {iter}"));
            break;
        }
        let mut grads = lg.grads;
        grads.clip_global_norm(cfg.clip_norm);
        adam.update(&mut params, &grads, lr);
    }
    curve.resize(cfg.iters, f64::NAN);

    Ok(TrainOutcome {
        initial,
        pretrained,
        params,
        curve,
        floss_history,
        diverged_iters,
        failure,
    })
}
