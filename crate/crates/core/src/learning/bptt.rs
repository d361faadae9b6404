//! Exact gradients by a manual reverse pass through the leaky update.
//!
//! With `δ_t = ∂L/∂h_t` (total derivative) and `D_t = ∂h_{t+1}/∂h_t`:
//!
//! ```text
//! δ_T = relu'(h_T) ⊙ W_outᵀ ∂L/∂ŷ_T
//! δ_t = relu'(h_t) ⊙ W_outᵀ ∂L/∂ŷ_t + D_tᵀ δ_{t+1}
//! ∂L/∂W_h   = (1 − α) Σ_t δ_{t+1} relu(h_t)ᵀ
//! ∂L/∂W_x   = (1 − α) Σ_t δ_{t+1} x_tᵀ
//! ∂L/∂W_out = Σ_t ∂L/∂ŷ_t relu(h_t)ᵀ
//! ```

use super::{batch_mean, mse_loss, Gradients, LossGrad};
use crate::rnn::{relu_prime, RnnParams, Trajectory};
use crate::tasks::{Trial, TrialBatch};
use crate::{Error, Result};

/// Loss and exact gradient for one trial along a recorded trajectory.
pub fn bptt_trial(p: &RnnParams, trial: &Trial, traj: &Trajectory) -> Result<(f64, Gradients)> {
    let (loss, dl_dy) = mse_loss(traj, trial)?;
    let n = p.n();
    let a = p.alpha;
    let b = 1.0 - a;
    let mut g = Gradients::zeros_like(p);
    let mut delta = vec![0.0; n];

    for t in (0..traj.steps()).rev() {
        let y_bar = dl_dy.row(t);
        let h_next = traj.hidden.row(t + 1);
        if y_bar.iter().any(|&v| v != 0.0) {
            g.g_wout.add_outer(1.0, y_bar, traj.rates.row(t + 1));
            let back = p.w_out.tr_matvec(y_bar);
            for ((d, bk), &h) in delta.iter_mut().zip(&back).zip(h_next) {
                *d += relu_prime(h) * bk;
            }
        }
        // delta is now ∂L/∂h_{t+1}
        g.g_wh.add_outer(b, &delta, traj.rates.row(t));
        g.g_wx.add_outer(b, &delta, traj.inputs.row(t));

        let h = traj.hidden.row(t);
        let rec = p.w_h.tr_matvec(&delta);
        for ((d, r), &hi) in delta.iter_mut().zip(&rec).zip(h) {
            *d = a * *d + b * relu_prime(hi) * r;
        }
    }
    Ok((loss, g))
}

/// Batch-mean loss and exact gradient. `trajs[i]` must be the forward pass of trial `i` under `p`.
pub fn bptt_gradients(p: &RnnParams, batch: &TrialBatch, trajs: &[Trajectory]) -> Result<LossGrad> {
    if trajs.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} trajectories for {} trials",
            trajs.len(),
            batch.len()
        )));
    }
    batch_mean(p, batch, |i, trial| {
        let traj = &trajs[i];
        let (loss, g) = bptt_trial(p, trial, traj)?;
        let bad = traj.diverged || !g.is_finite();
        Ok((loss, g, bad))
    })
}
