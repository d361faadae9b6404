//! Gradient flossing: pretraining that drives the leading Lyapunov exponents
//! toward zero by minimizing `Σ_{i≤k} λ_i²`.
//!
//! The gradient honours the same locality truncation as e-prop: the driven
//! states `h_t` are frozen, so the weights enter only through each Jacobian
//! `D_t = α I + (1 − α) W_h diag(relu'(h_t))`. Under [`FrameGradient::Chain`]
//! the reverse pass runs through the whole QR chain (the frame `Q_t` depends
//! on earlier Jacobians); under [`FrameGradient::PerStep`] each step's frame is
//! also held fixed. Input and readout weights get no flossing gradient.

use serde::{Deserialize, Serialize};

use crate::learning::{AdamState, Gradients};
use crate::lyapunov::{random_frame, InputStream};
use crate::numerics::{qr_backward, thin_qr, Matrix, Qr, RngStream, RANK_TOL};
use crate::rnn::{apply_jacobian, relu_prime, step_into, RnnParams};
use crate::{Error, Result};

/// Exponents are clamped to `±LAMBDA_CAP` before squaring.
pub const LAMBDA_CAP: f64 = 50.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameGradient {
    /// Differentiate through the frame recursion.
    #[default]
    Chain,
    /// Treat each step's incoming frame as a constant.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlossConfig {
    /// Number of regularized exponents.
    pub k: usize,
    pub pretrain_iters: usize,
    /// Steps averaged per flossing evaluation.
    pub horizon: usize,
    /// Steps simulated (and differentiated through) before averaging starts.
    pub warmup: usize,
    pub lr: f64,
    #[serde(default)]
    pub frame_gradient: FrameGradient,
}

impl Default for FlossConfig {
    fn default() -> Self {
        Self {
            k: 1,
            pretrain_iters: 100,
            horizon: 500,
            warmup: 50,
            lr: 1e-3,
            frame_gradient: FrameGradient::Chain,
        }
    }
}

impl FlossConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n.min(8) {
            return Err(Error::Config(format!("flossing k = {} must lie in 1..={}", self.k, n.min(8))));
        }
        if self.horizon == 0 {
            return Err(Error::Config("flossing horizon must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid flossing lr {}", self.lr)));
        }
        Ok(())
    }

    fn total_steps(&self) -> usize {
        self.warmup + self.horizon
    }
}

/// States and starting frame held fixed while the weights vary.
#[derive(Debug, Clone)]
pub struct FrozenRollout {
    /// `steps × N`, row `t` is `h_t` (before the update driven by `x_t`).
    pub hidden: Matrix,
    pub frame: Matrix,
}

impl FrozenRollout {
    /// Simulates `inputs.rows()` steps from the zero state.
    pub fn record(p: &RnnParams, inputs: &Matrix, frame: Matrix) -> Self {
        let n = p.n();
        let mut hidden = Matrix::zeros(inputs.rows(), n);
        let mut h = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut rates = vec![0.0; n];
        for t in 0..inputs.rows() {
            hidden.row_mut(t).copy_from_slice(&h);
            step_into(p, &h, inputs.row(t), &mut rates, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        Self { hidden, frame }
    }

    /// Draws inputs from `stream` and then the frame, in the same order as
    /// [`crate::lyapunov::lyapunov_spectrum`].
    pub fn sample(p: &RnnParams, stream: &InputStream, cfg: &FlossConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate(p.n())?;
        let inputs = stream.materialize(cfg.total_steps(), p.n_in(), rng)?;
        let frame = random_frame(p.n(), cfg.k, rng);
        Ok(Self::record(p, &inputs, frame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlossValue {
    pub loss: f64,
    /// Unsorted, uncapped exponents in frame-column order.
    pub lambdas: Vec<f64>,
    /// Some exponent hit the cap (including rank collapse).
    pub capped: bool,
}

struct Chain {
    factors: Vec<Qr>,
    value: FlossValue,
    collapsed: bool,
}

fn run_chain(p: &RnnParams, rollout: &FrozenRollout, cfg: &FlossConfig) -> Result<Chain> {
    let steps = rollout.hidden.rows();
    if steps <= cfg.warmup {
        return Err(Error::Config(format!("rollout of {steps} steps does not reach past warmup {}", cfg.warmup)));
    }
    let horizon = (steps - cfg.warmup) as f64;
    let mut q = rollout.frame.clone();
    let mut sums = vec![0.0; cfg.k];
    let mut factors = Vec::with_capacity(steps);
    let mut collapsed = false;
    for t in 0..steps {
        let z = apply_jacobian(p, rollout.hidden.row(t), &q);
        let qr = thin_qr(&z)?;
        if t >= cfg.warmup {
            for (i, s) in sums.iter_mut().enumerate() {
                let r = qr.r[(i, i)];
                if r < RANK_TOL {
                    collapsed = true;
                    *s = f64::NEG_INFINITY;
                } else {
                    *s += r.ln();
                }
            }
        }
        q = qr.q.clone();
        factors.push(qr);
    }
    let lambdas: Vec<f64> = sums.iter().map(|s| s / horizon).collect();
    let mut capped = collapsed;
    let loss = lambdas
        .iter()
        .map(|&l| {
            if !(l.abs() < LAMBDA_CAP) {
                capped = true;
            }
            let c = if l.is_nan() { LAMBDA_CAP } else { l.clamp(-LAMBDA_CAP, LAMBDA_CAP) };
            c * c
        })
        .sum();
    Ok(Chain {
        factors,
        value: FlossValue { loss, lambdas, capped },
        collapsed,
    })
}

/// `Σ λ_i²` on a frozen rollout.
pub fn flossing_loss_frozen(p: &RnnParams, rollout: &FrozenRollout, cfg: &FlossConfig) -> Result<FlossValue> {
    Ok(run_chain(p, rollout, cfg)?.value)
}

/// `Σ λ_i²` and its truncated gradient on a frozen rollout.
pub fn flossing_gradients_frozen(
    p: &RnnParams,
    rollout: &FrozenRollout,
    cfg: &FlossConfig,
) -> Result<(FlossValue, Gradients)> {
    let chain = run_chain(p, rollout, cfg)?;
    let mut grads = Gradients::zeros_like(p);
    if chain.collapsed {
        return Ok((chain.value, grads));
    }
    let n = p.n();
    let k = cfg.k;
    let a = p.alpha;
    let b = 1.0 - a;
    let horizon = (rollout.hidden.rows() - cfg.warmup) as f64;
    let coef: Vec<f64> = chain
        .value
        .lambdas
        .iter()
        .map(|&l| if l.abs() < LAMBDA_CAP { 2.0 * l / horizon } else { 0.0 })
        .collect();

    let mut q_bar = Matrix::zeros(n, k);
    let mut r_bar = Matrix::zeros(k, k);
    let mut gated = vec![0.0; n];
    for t in (0..chain.factors.len()).rev() {
        let qr = &chain.factors[t];
        r_bar.fill(0.0);
        if t >= cfg.warmup {
            for i in 0..k {
                r_bar[(i, i)] = coef[i] / qr.r[(i, i)];
            }
        }
        let z_bar = qr_backward(&qr.q, &qr.r, &q_bar, &r_bar);
        let q_prev = if t == 0 { &rollout.frame } else { &chain.factors[t - 1].q };
        let h = rollout.hidden.row(t);

        // W̄_h[i,j] += (1 − α) relu'(h_j) Σ_c Z̄[i,c] Q_prev[j,c]
        for (g, &hj) in gated.iter_mut().zip(h) {
            *g = b * relu_prime(hj);
        }
        for i in 0..n {
            let zi = z_bar.row(i);
            let row = grads.g_wh.row_mut(i);
            for (j, gw) in row.iter_mut().enumerate() {
                if gated[j] != 0.0 {
                    let s: f64 = zi.iter().zip(q_prev.row(j)).map(|(x, y)| x * y).sum();
                    *gw += gated[j] * s;
                }
            }
        }

        match cfg.frame_gradient {
            FrameGradient::PerStep => q_bar.fill(0.0),
            FrameGradient::Chain => {
                // Q̄_prev = D_tᵀ Z̄ = α Z̄ + (1 − α) diag(relu'(h)) W_hᵀ Z̄
                let mut next = z_bar.clone();
                next.scale(a);
                for l in 0..n {
                    let zl = z_bar.row(l);
                    for (j, &wlj) in p.w_h.row(l).iter().enumerate() {
                        if gated[j] == 0.0 || wlj == 0.0 {
                            continue;
                        }
                        let s = gated[j] * wlj;
                        for (nc, zc) in next.row_mut(j).iter_mut().zip(zl) {
                            *nc += s * zc;
                        }
                    }
                }
                q_bar = next;
            }
        }
    }
    Ok((chain.value, grads))
}

/// Samples a rollout from `stream` and returns `Σ λ_i²`.
pub fn flossing_loss(p: &RnnParams, stream: &InputStream, cfg: &FlossConfig, rng: &mut RngStream) -> Result<FlossValue> {
    let rollout = FrozenRollout::sample(p, stream, cfg, rng)?;
    flossing_loss_frozen(p, &rollout, cfg)
}

/// Samples a rollout from `stream` and returns `Σ λ_i²` with its truncated gradient.
pub fn flossing_gradients(
    p: &RnnParams,
    stream: &InputStream,
    cfg: &FlossConfig,
    rng: &mut RngStream,
) -> Result<(FlossValue, Gradients)> {
    let rollout = FrozenRollout::sample(p, stream, cfg, rng)?;
    flossing_gradients_frozen(p, &rollout, cfg)
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub params: RnnParams,
    /// Flossing loss before each update.
    pub history: Vec<f64>,
    /// Iterations whose exponents were capped.
    pub capped_iters: usize,
}

/// Runs `cfg.pretrain_iters` Adam steps on the flossing gradient, each on a
/// fresh rollout. Fails after 5 consecutive non-finite losses.
pub fn pretrain_floss(
    p: &RnnParams,
    cfg: &FlossConfig,
    stream: &InputStream,
    rng: &mut RngStream,
) -> Result<PretrainReport> {
    cfg.validate(p.n())?;
    let mut params = p.clone();
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.pretrain_iters);
    let mut bad_streak = 0;
    let mut capped_iters = 0;
    for iter in 0..cfg.pretrain_iters {
        let (value, grads) = flossing_gradients(&params, stream, cfg, rng)?;
        history.push(value.loss);
        capped_iters += usize::from(value.capped);
        if !value.loss.is_finite() || !grads.is_finite() {
            bad_streak += 1;
            if bad_streak >= 5 {
                return Err(Error::Divergence(format!(
                    "flossing loss non-finite for 5 consecutive iterations (stopped at {iter})"
                )));
            }
            continue;
        }
        bad_streak = 0;
        adam.update(&mut params, &grads, cfg.lr);
    }
    Ok(PretrainReport {
        params,
        history,
        capped_iters,
    })
}
