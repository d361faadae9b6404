//! Loss, exact and truncated gradients, and the optimizer.
//!
//! Both gradient rules return the batch *mean* over trials. Per-trial work is
//! spread over the rayon pool and reduced sequentially in trial order, so
//! results do not depend on the number of worker threads.

mod adam;
mod bptt;
mod eprop;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use bptt::{bptt_gradients, bptt_trial};
pub use eprop::{eprop_gradients, eprop_trial, EligibilityTrace};
pub use loss::mse_loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;
use crate::rnn::{forward, RnnParams, Trajectory};
use crate::tasks::{Trial, TrialBatch};
use crate::{Error, Result};

/// Global-norm threshold applied to every gradient before the optimizer step.
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Bptt,
    Eprop,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Bptt => "bptt",
            Rule::Eprop => "eprop",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bptt" => Ok(Rule::Bptt),
            "eprop" | "e-prop" | "rflo" => Ok(Rule::Eprop),
            other => Err(Error::Config(format!("unknown rule {other:?}"))),
        }
    }
}

/// Self-coupling factor used by the eligibility traces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// `α + (1 − α) W_h[i,i] relu'(h_i)`: the diagonal of the state Jacobian.
    #[default]
    Diagonal,
    /// `α`: leak only.
    LeakOnly,
    /// `0`: only the instantaneous term, as with a detached hidden state.
    OneStep,
}

impl std::str::FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "full" => Ok(TraceMode::Diagonal),
            "leak_only" => Ok(TraceMode::LeakOnly),
            "one_step" | "detach" => Ok(TraceMode::OneStep),
            other => Err(Error::Config(format!("unknown trace mode {other:?}"))),
        }
    }
}

/// Loss gradients with the same shapes as [`RnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub g_wh: Matrix,
    pub g_wx: Matrix,
    pub g_wout: Matrix,
}

impl Gradients {
    pub fn zeros_like(p: &RnnParams) -> Self {
        Self {
            g_wh: Matrix::zeros(p.n(), p.n()),
            g_wx: Matrix::zeros(p.n(), p.n_in()),
            g_wout: Matrix::zeros(p.n_out(), p.n()),
        }
    }

    pub fn parts(&self) -> [&Matrix; 3] {
        [&self.g_wh, &self.g_wx, &self.g_wout]
    }

    pub fn parts_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.g_wh, &mut self.g_wx, &mut self.g_wout]
    }

    pub fn add_scaled(&mut self, s: f64, other: &Gradients) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            a.add_scaled(s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.parts_mut() {
            m.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.parts().iter().map(|m| m.frobenius_sq()).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|m| m.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.parts()
            .iter()
            .zip(other.parts())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Batch-mean loss and gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Gradients,
    /// Forward states blew up or some gradient entry is non-finite.
    pub diverged: bool,
}

pub(crate) fn check_batch(p: &RnnParams, batch: &TrialBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    for trial in &batch.trials {
        if trial.inputs.cols() != p.n_in() || trial.targets.cols() != p.n_out() {
            return Err(Error::Shape(format!(
                "trial has {} inputs / {} outputs, network has {} / {}",
                trial.inputs.cols(),
                trial.targets.cols(),
                p.n_in(),
                p.n_out()
            )));
        }
    }
    Ok(())
}

/// Runs `per_trial` over all trials and averages in trial order.
pub(crate) fn batch_mean<F>(p: &RnnParams, batch: &TrialBatch, per_trial: F) -> Result<LossGrad>
where
    F: Fn(usize, &Trial) -> Result<(f64, Gradients, bool)> + Sync,
{
    check_batch(p, batch)?;
    let results: Vec<Result<(f64, Gradients, bool)>> =
        batch
            .trials
            .par_iter()
            .enumerate()
            .map(|(i, t)| per_trial(i, t))
            .collect();
    let mut total = Gradients::zeros_like(p);
    let mut loss = 0.0;
    let mut diverged = false;
    for r in results {
        let (l, g, d) = r?;
        loss += l;
        total.add_scaled(1.0, &g);
        diverged |= d;
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    loss *= inv;
    diverged |= !total.is_finite() || !loss.is_finite();
    Ok(LossGrad {
        loss,
        grads: total,
        diverged,
    })
}

/// Forward pass for every trial from the zero state.
pub fn forward_batch(p: &RnnParams, batch: &TrialBatch) -> Result<Vec<Trajectory>> {
    let h0 = vec![0.0; p.n()];
    batch
        .trials
        .par_iter()
        .map(|t| forward(p, &t.inputs, &h0))
        .collect()
}

/// Batch-mean loss without gradients.
pub fn batch_loss(p: &RnnParams, batch: &TrialBatch) -> Result<f64> {
    check_batch(p, batch)?;
    let trajs = forward_batch(p, batch)?;
    let mut total = 0.0;
    for (traj, trial) in trajs.iter().zip(&batch.trials) {
        total += mse_loss(traj, trial)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Loss and gradient under `rule`.
pub fn compute_gradients(
    rule: Rule,
    p: &RnnParams,
    batch: &TrialBatch,
    trace: TraceMode,
) -> Result<LossGrad> {
    match rule {
        Rule::Bptt => {
            let trajs = forward_batch(p, batch)?;
            bptt_gradients(p, batch, &trajs)
        }
        Rule::Eprop => eprop_gradients(p, batch, trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_norm() {
        let p = RnnParams::zeros(crate::rnn::ArchConfig::new(2, 1, 1, 0.5));
        let mut g = Gradients::zeros_like(&p);
        g.g_wh.fill(3.0);
        let before = g.clip_global_norm(1.0);
        assert!((before - 6.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = Gradients::zeros_like(&p);
        small.g_wx.fill(0.1);
        let copy = small.clone();
        small.clip_global_norm(1.0);
        assert_eq!(small, copy);
    }

    #[test]
    fn parse_rules() {
        assert_eq!("BPTT".parse::<Rule>().unwrap(), Rule::Bptt);
        assert_eq!("e-prop".parse::<Rule>().unwrap(), Rule::Eprop);
        assert!("sgd".parse::<Rule>().is_err());
        assert_eq!("detach".parse::<TraceMode>().unwrap(), TraceMode::OneStep);
    }
}
