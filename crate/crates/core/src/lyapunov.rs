//! Lyapunov exponents by the QR (Benettin) method.
//!
//! An orthonormal frame `Q ∈ R^{N×k}` is pushed through the per-step state
//! Jacobians along a driven trajectory and re-orthonormalized every step:
//! `Q_{t+1} R_{t+1} = D_t Q_t`. After `warmup` steps the logs of the diagonal
//! of `R` are averaged over `horizon` steps. Exponents are in nats per
//! simulation step; multiply by `1/dt` for nats per unit time.

use serde::{Deserialize, Serialize};

use crate::numerics::{thin_qr, Matrix, RngStream, RANK_TOL};
use crate::rnn::{apply_jacobian, step_into, RnnParams, DIVERGENCE_BOUND};
use crate::tasks::{generate, TaskConfig};
use crate::{Error, Result};

/// Where the driving inputs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputStream {
    /// Autonomous dynamics.
    Zero,
    /// The same input vector every step.
    Constant { value: Vec<f64> },
    /// Fresh trials of a task, concatenated end to end.
    Task { task: TaskConfig },
}

impl InputStream {
    /// `steps × n_in` inputs. Only the task stream consumes randomness.
    pub fn materialize(&self, steps: usize, n_in: usize, rng: &mut RngStream) -> Result<Matrix> {
        let mut out = Matrix::zeros(steps, n_in);
        match self {
            InputStream::Zero => {}
            InputStream::Constant { value } => {
                if value.len() != n_in {
                    return Err(Error::Shape(format!(
                        "constant input has {} channels, network expects {n_in}",
                        value.len()
                    )));
                }
                for t in 0..steps {
                    out.row_mut(t).copy_from_slice(value);
                }
            }
            InputStream::Task { task } => {
                if task.n_in() != n_in {
                    return Err(Error::Shape(format!(
                        "task {} has {} inputs, network expects {n_in}",
                        task.task,
                        task.n_in()
                    )));
                }
                let mut t = 0;
                while t < steps {
                    let batch = generate(task, rng)?;
                    for trial in &batch.trials {
                        for s in 0..trial.steps() {
                            if t == steps {
                                break;
                            }
                            out.row_mut(t).copy_from_slice(trial.inputs.row(s));
                            t += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    pub k: usize,
    pub warmup: usize,
    pub horizon: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            k: 1,
            warmup: 200,
            horizon: 2000,
        }
    }
}

impl LyapunovOptions {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::Config(format!("k = {} must lie in 1..={n}", self.k)));
        }
        if self.horizon < 100 {
            return Err(Error::Config(format!("horizon {} is below 100 steps", self.horizon)));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup + self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub k: usize,
    /// Sorted descending; `-inf` marks a collapsed direction.
    pub lambdas: Vec<f64>,
    /// Partial estimates after each post-warmup step, same order as `lambdas`.
    pub running_means: Vec<Vec<f64>>,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Some `R_ii` fell below [`RANK_TOL`].
    pub rank_collapse: bool,
    /// The driven state left the bounded region.
    pub diverged: bool,
}

impl LyapunovEstimate {
    pub fn max(&self) -> f64 {
        self.lambdas[0]
    }

    /// Spread (max − min) of the leading running mean over the last `frac` of the horizon.
    pub fn tail_variation(&self, frac: f64) -> f64 {
        let n = self.running_means.len();
        let start = n - ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let tail = self.running_means[start..].iter().map(|r| r[0]);
        let (lo, hi) = tail.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}

/// Orthonormal `n × k` starting frame. Columns are drawn one after another, so
/// the first `j` columns do not depend on `k`.
pub fn random_frame(n: usize, k: usize, rng: &mut RngStream) -> Matrix {
    let mut a = Matrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            a[(i, j)] = rng.gaussian();
        }
    }
    thin_qr(&a).expect("n >= k").q
}

/// Estimates the leading `opts.k` exponents along the trajectory driven by `inputs`
/// (at least `opts.total_steps()` rows) from `h_0 = 0`, starting from `frame`.
pub fn lyapunov_along(
    p: &RnnParams,
    inputs: &Matrix,
    opts: &LyapunovOptions,
    frame: Matrix,
) -> Result<LyapunovEstimate> {
    opts.validate(p.n())?;
    let total = opts.total_steps();
    if inputs.rows() < total || inputs.cols() != p.n_in() {
        return Err(Error::Shape(format!(
            "need {total}x{} inputs, got {:?}",
            p.n_in(),
            inputs.shape()
        )));
    }
    if frame.shape() != (p.n(), opts.k) {
        return Err(Error::Shape(format!("frame is {:?}, expected {}x{}", frame.shape(), p.n(), opts.k)));
    }

    let n = p.n();
    let k = opts.k;
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut rates = vec![0.0; n];
    let mut q = frame;
    let mut sums = vec![0.0; k];
    let mut running_means = Vec::with_capacity(opts.horizon);
    let mut rank_collapse = false;
    let mut diverged = false;

    for t in 0..total {
        let z = apply_jacobian(p, &h, &q);
        let qr = thin_qr(&z)?;
        if t >= opts.warmup {
            for (i, s) in sums.iter_mut().enumerate() {
                let r = qr.r[(i, i)];
                if r < RANK_TOL {
                    rank_collapse = true;
                    *s = f64::NEG_INFINITY;
                } else {
                    *s += r.ln();
                }
            }
            let count = (t + 1 - opts.warmup) as f64;
            running_means.push(sums.iter().map(|s| s / count).collect::<Vec<_>>());
        }
        q = qr.q;
        step_into(p, &h, inputs.row(t), &mut rates, &mut next);
        std::mem::swap(&mut h, &mut next);
        if h.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)) {
            diverged = true;
        }
    }

    let mut lambdas: Vec<f64> = sums.iter().map(|s| s / opts.horizon as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    lambdas = order.iter().map(|&i| lambdas[i]).collect();
    for rm in running_means.iter_mut() {
        *rm = order.iter().map(|&i| rm[i]).collect();
    }

    Ok(LyapunovEstimate {
        k,
        lambdas,
        running_means,
        warmup_steps: opts.warmup,
        total_steps: opts.horizon,
        rank_collapse,
        diverged,
    })
}

/// Leading `opts.k` exponents along inputs drawn from `stream`. The inputs are
/// drawn from `rng` first, then the starting frame.
pub fn lyapunov_spectrum(
    p: &RnnParams,
    stream: &InputStream,
    opts: &LyapunovOptions,
    rng: &mut RngStream,
) -> Result<LyapunovEstimate> {
    opts.validate(p.n())?;
    let inputs = stream.materialize(opts.total_steps(), p.n_in(), rng)?;
    let frame = random_frame(p.n(), opts.k, rng);
    lyapunov_along(p, &inputs, opts, frame)
}

/// Largest exponent (`k = 1`).
pub fn max_lyapunov(
    p: &RnnParams,
    stream: &InputStream,
    warmup: usize,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let opts = LyapunovOptions { k: 1, warmup, horizon };
    Ok(lyapunov_spectrum(p, stream, &opts, rng)?.max())
}
