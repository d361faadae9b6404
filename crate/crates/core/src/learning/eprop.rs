//! Truncated online gradients (e-prop / RFLO).
//!
//! The sensitivity `∂h_{l,t}/∂W_h[i,j]` is kept only for `l = i` and follows
//!
//! ```text
//! e_{t+1}[i,j] = c_i(t) · e_t[i,j] + (1 − α) · relu(h_{j,t})
//! ```
//!
//! where the self-coupling `c_i(t)` is chosen by [`TraceMode`]. Input weights
//! use the same recursion with `x_{j,t}` in place of the presynaptic rate. The
//! learning signal is the instantaneous readout error
//! `relu'(h_{i,t}) · (W_outᵀ ∂L/∂ŷ_t)_i`; nothing is propagated backwards in time.
//! The readout gradient is local and therefore exact.

use super::{batch_mean, mse_loss, Gradients, LossGrad, TraceMode};
use crate::numerics::{axpy, Matrix};
use crate::rnn::{forward, relu_prime, RnnParams, Trajectory};
use crate::tasks::{Trial, TrialBatch};
use crate::Result;

/// Per-synapse running sensitivities of each unit's state to its own incoming weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    /// Entry `[i, j]` approximates `∂h_i/∂W_h[i,j]`.
    pub e_wh: Matrix,
    /// Entry `[i, j]` approximates `∂h_i/∂W_x[i,j]`.
    pub e_wx: Matrix,
}

impl EligibilityTrace {
    pub fn new(p: &RnnParams) -> Self {
        Self {
            e_wh: Matrix::zeros(p.n(), p.n()),
            e_wx: Matrix::zeros(p.n(), p.n_in()),
        }
    }

    pub fn reset(&mut self) {
        self.e_wh.fill(0.0);
        self.e_wx.fill(0.0);
    }

    /// Advances the traces across the update `h_t → h_{t+1}`.
    pub fn advance(&mut self, p: &RnnParams, h: &[f64], rates: &[f64], x: &[f64], mode: TraceMode) {
        let b = 1.0 - p.alpha;
        for i in 0..p.n() {
            let c = match mode {
                TraceMode::Diagonal => p.alpha + b * p.w_h[(i, i)] * relu_prime(h[i]),
                TraceMode::LeakOnly => p.alpha,
                TraceMode::OneStep => 0.0,
            };
            for (e, &r) in self.e_wh.row_mut(i).iter_mut().zip(rates) {
                *e = c * *e + b * r;
            }
            for (e, &xj) in self.e_wx.row_mut(i).iter_mut().zip(x) {
                *e = c * *e + b * xj;
            }
        }
    }
}

/// Loss and truncated gradient for one trial along a recorded trajectory.
///
/// Reads only `W_h[i,i]` from the recurrent weights and the readout `W_out`,
/// so row `i` of the result does not depend on other rows of `W_h`.
pub fn eprop_trial(
    p: &RnnParams,
    trial: &Trial,
    traj: &Trajectory,
    mode: TraceMode,
) -> Result<(f64, Gradients)> {
    let (loss, dl_dy) = mse_loss(traj, trial)?;
    if mode != TraceMode::Diagonal {
        return Ok((loss, shared_trace_gradients(p, traj, &dl_dy, mode)));
    }
    let mut trace = EligibilityTrace::new(p);
    let mut g = Gradients::zeros_like(p);

    for t in 0..traj.steps() {
        trace.advance(
            p,
            traj.hidden.row(t),
            traj.rates.row(t),
            traj.inputs.row(t),
            mode,
        );
        let y_bar = dl_dy.row(t);
        if y_bar.iter().all(|&v| v == 0.0) {
            continue;
        }
        let rates_next = traj.rates.row(t + 1);
        g.g_wout.add_outer(1.0, y_bar, rates_next);
        let signal = p.w_out.tr_matvec(y_bar);
        for (i, (&s, &h)) in signal.iter().zip(traj.hidden.row(t + 1)).enumerate() {
            let l = s * relu_prime(h);
            if l == 0.0 {
                continue;
            }
            axpy(l, trace.e_wh.row(i), g.g_wh.row_mut(i));
            axpy(l, trace.e_wx.row(i), g.g_wx.row_mut(i));
        }
    }
    Ok((loss, g))
}

/// When the self-coupling is the same for every unit, all rows of the trace
/// coincide and one row is enough. Same arithmetic as the full trace.
fn shared_trace_gradients(p: &RnnParams, traj: &Trajectory, dl_dy: &Matrix, mode: TraceMode) -> Gradients {
    let c = if mode == TraceMode::LeakOnly { p.alpha } else { 0.0 };
    let b = 1.0 - p.alpha;
    let mut e_h = vec![0.0; p.n()];
    let mut e_x = vec![0.0; p.n_in()];
    let mut g = Gradients::zeros_like(p);
    for t in 0..traj.steps() {
        for (e, &r) in e_h.iter_mut().zip(traj.rates.row(t)) {
            *e = c * *e + b * r;
        }
        for (e, &x) in e_x.iter_mut().zip(traj.inputs.row(t)) {
            *e = c * *e + b * x;
        }
        let y_bar = dl_dy.row(t);
        if y_bar.iter().all(|&v| v == 0.0) {
            continue;
        }
        g.g_wout.add_outer(1.0, y_bar, traj.rates.row(t + 1));
        let signal = p.w_out.tr_matvec(y_bar);
        for (i, (&s, &h)) in signal.iter().zip(traj.hidden.row(t + 1)).enumerate() {
            let l = s * relu_prime(h);
            if l != 0.0 {
                axpy(l, &e_h, g.g_wh.row_mut(i));
                axpy(l, &e_x, g.g_wx.row_mut(i));
            }
        }
    }
    g
}

/// Batch-mean loss and truncated gradient, running each trial forward once.
pub fn eprop_gradients(p: &RnnParams, batch: &TrialBatch, mode: TraceMode) -> Result<LossGrad> {
    let h0 = vec![0.0; p.n()];
    batch_mean(p, batch, |_, trial| {
        let traj = forward(p, &trial.inputs, &h0)?;
        let (loss, g) = eprop_trial(p, trial, &traj, mode)?;
        let bad = traj.diverged || !g.is_finite();
        Ok((loss, g, bad))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::rnn::{init_params, ArchConfig};
    use crate::tasks::{generate, TaskConfig, TaskKind};

    #[test]
    fn shared_trace_matches_full_trace_bitwise() {
        let task = TaskConfig::defaults(TaskKind::Dms).with_batch(2);
        let mut rng = RngStream::new(5);
        let batch = generate(&task, &mut rng).unwrap();
        let p = init_params(ArchConfig::new(7, task.n_in(), task.n_out(), 0.7), 1.3, &mut rng).unwrap();
        for trial in &batch.trials {
            let traj = forward(&p, &trial.inputs, &[0.0; 7]).unwrap();
            let (_, dl_dy) = mse_loss(&traj, trial).unwrap();
            for mode in [TraceMode::LeakOnly, TraceMode::OneStep] {
                let fast = shared_trace_gradients(&p, &traj, &dl_dy, mode);
                let mut trace = EligibilityTrace::new(&p);
                let mut g = Gradients::zeros_like(&p);
                for t in 0..traj.steps() {
                    trace.advance(&p, traj.hidden.row(t), traj.rates.row(t), traj.inputs.row(t), mode);
                    let y_bar = dl_dy.row(t);
                    g.g_wout.add_outer(1.0, y_bar, traj.rates.row(t + 1));
                    let signal = p.w_out.tr_matvec(y_bar);
                    for i in 0..7 {
                        let l = signal[i] * relu_prime(traj.hidden[(t + 1, i)]);
                        if l != 0.0 {
                            axpy(l, trace.e_wh.row(i), g.g_wh.row_mut(i));
                            axpy(l, trace.e_wx.row(i), g.g_wx.row_mut(i));
                        }
                    }
                }
                assert_eq!(fast, g, "{mode:?}");
            }
        }
    }
}
