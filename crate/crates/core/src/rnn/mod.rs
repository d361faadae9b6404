//! Leaky ReLU recurrent network:
//!
//! ```text
//! h_{t+1} = α h_t + (1 − α) (W_h relu(h_t) + W_x x_t)
//! ŷ_t     = W_out relu(h_t)
//! ```
//!
//! `α = 1 − dt/τ`. The initial state is always zero and there is no readout bias.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta};

use serde::{Deserialize, Serialize};

use crate::numerics::{gaussian_matrix, Matrix, RngStream};
use crate::{Error, Result};

/// States with any coordinate beyond this magnitude mark a trajectory as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Architecture constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub n: usize,
    pub n_in: usize,
    pub n_out: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

pub fn default_alpha() -> f64 {
    0.8
}

impl ArchConfig {
    pub fn new(n: usize, n_in: usize, n_out: usize, alpha: f64) -> Self {
        Self { n, n_in, n_out, alpha }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Config(format!("dimensions must be positive: {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Trainable weights plus architecture constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w_h: Matrix,
    pub w_x: Matrix,
    pub w_out: Matrix,
    pub alpha: f64,
}

impl RnnParams {
    pub fn zeros(arch: ArchConfig) -> Self {
        Self {
            w_h: Matrix::zeros(arch.n, arch.n),
            w_x: Matrix::zeros(arch.n, arch.n_in),
            w_out: Matrix::zeros(arch.n_out, arch.n),
            alpha: arch.alpha,
        }
    }

    /// Assembles parameters, checking that the three matrices agree on dimensions.
    pub fn from_parts(w_h: Matrix, w_x: Matrix, w_out: Matrix, alpha: f64) -> Result<Self> {
        let n = w_h.rows();
        if w_h.cols() != n || w_x.rows() != n || w_out.cols() != n {
            return Err(Error::Shape(format!(
                "inconsistent weights: w_h {:?}, w_x {:?}, w_out {:?}",
                w_h.shape(),
                w_x.shape(),
                w_out.shape()
            )));
        }
        let p = Self { w_h, w_x, w_out, alpha };
        p.arch().validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.w_h.rows()
    }

    pub fn n_in(&self) -> usize {
        self.w_x.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w_out.rows()
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::new(self.n(), self.n_in(), self.n_out(), self.alpha)
    }

    pub fn is_finite(&self) -> bool {
        self.w_h.is_finite() && self.w_x.is_finite() && self.w_out.is_finite()
    }
}

/// Recurrent weights `~ N(0, gain²/N)`, input weights `~ N(0, 1/N_in)`,
/// readout weights `~ N(0, 1/N)`, drawn in that order.
pub fn init_params(arch: ArchConfig, gain: f64, rng: &mut RngStream) -> Result<RnnParams> {
    arch.validate()?;
    if gain < 0.0 || !gain.is_finite() {
        return Err(Error::Config(format!("gain must be finite and non-negative, got {gain}")));
    }
    let n = arch.n as f64;
    let w_h = gaussian_matrix(rng, arch.n, arch.n, gain / n.sqrt());
    let w_x = gaussian_matrix(rng, arch.n, arch.n_in, 1.0 / (arch.n_in as f64).sqrt());
    let w_out = gaussian_matrix(rng, arch.n_out, arch.n, 1.0 / n.sqrt());
    Ok(RnnParams {
        w_h,
        w_x,
        w_out,
        alpha: arch.alpha,
    })
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative of relu with `relu'(0) = 0`.
#[inline]
pub fn relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One update of the hidden state.
pub fn step(p: &RnnParams, h: &[f64], x: &[f64]) -> Vec<f64> {
    let mut rates = vec![0.0; h.len()];
    let mut out = vec![0.0; h.len()];
    step_into(p, h, x, &mut rates, &mut out);
    out
}

/// `rates` receives `relu(h)`; `out` receives the next state.
pub(crate) fn step_into(p: &RnnParams, h: &[f64], x: &[f64], rates: &mut [f64], out: &mut [f64]) {
    assert_eq!(h.len(), p.n(), "state dimension mismatch");
    assert_eq!(x.len(), p.n_in(), "input dimension mismatch");
    for (r, &hi) in rates.iter_mut().zip(h) {
        *r = relu(hi);
    }
    let a = p.alpha;
    let b = 1.0 - a;
    for (i, o) in out.iter_mut().enumerate() {
        let rec: f64 = p.w_h.row(i).iter().zip(rates.iter()).map(|(w, r)| w * r).sum();
        let inp: f64 = p.w_x.row(i).iter().zip(x).map(|(w, xi)| w * xi).sum();
        *o = a * h[i] + b * (rec + inp);
    }
}

/// Recorded forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(T+1) × N`, row `t` is `h_t`.
    pub hidden: Matrix,
    /// `(T+1) × N`, row `t` is `relu(h_t)`.
    pub rates: Matrix,
    /// `T × N_out`, row `t` is the readout of `h_{t+1}`.
    pub outputs: Matrix,
    /// `T × N_in`, row `t` is `x_t`, which drives `h_t → h_{t+1}`.
    pub inputs: Matrix,
    /// Some state coordinate exceeded [`DIVERGENCE_BOUND`] or became non-finite.
    pub diverged: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.outputs.rows()
    }
}

/// Simulates `inputs.rows()` steps from `h0`.
pub fn forward(p: &RnnParams, inputs: &Matrix, h0: &[f64]) -> Result<Trajectory> {
    let n = p.n();
    if inputs.cols() != p.n_in() {
        return Err(Error::Shape(format!(
            "inputs have {} channels, network expects {}",
            inputs.cols(),
            p.n_in()
        )));
    }
    if h0.len() != n {
        return Err(Error::Shape(format!("h0 has length {}, expected {n}", h0.len())));
    }
    if !inputs.is_finite() {
        return Err(Error::Config("non-finite inputs".into()));
    }
    let t_len = inputs.rows();
    let mut hidden = Matrix::zeros(t_len + 1, n);
    let mut rates = Matrix::zeros(t_len + 1, n);
    let mut outputs = Matrix::zeros(t_len, p.n_out());
    hidden.row_mut(0).copy_from_slice(h0);

    let mut next = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut diverged = false;
    for t in 0..t_len {
        step_into(p, hidden.row(t), inputs.row(t), &mut r, &mut next);
        rates.row_mut(t).copy_from_slice(&r);
        hidden.row_mut(t + 1).copy_from_slice(&next);
        if next.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)) {
            diverged = true;
        }
    }
    for (rt, &ht) in rates.row_mut(t_len).iter_mut().zip(hidden.row(t_len)) {
        *rt = relu(ht);
    }
    for t in 0..t_len {
        let y = p.w_out.matvec(rates.row(t + 1));
        outputs.row_mut(t).copy_from_slice(&y);
    }
    Ok(Trajectory {
        hidden,
        rates,
        outputs,
        inputs: inputs.clone(),
        diverged,
    })
}

/// `∂h_{t+1}/∂h_t = α I + (1 − α) W_h diag(relu'(h_t))`.
pub fn jacobian_step(p: &RnnParams, h: &[f64]) -> Matrix {
    let n = p.n();
    assert_eq!(h.len(), n, "state dimension mismatch");
    let b = 1.0 - p.alpha;
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let row = d.row_mut(i);
        for (j, (dij, &w)) in row.iter_mut().zip(p.w_h.row(i)).enumerate() {
            *dij = b * w * relu_prime(h[j]);
        }
        row[i] += p.alpha;
    }
    d
}

/// `jacobian_step(p, h) · frame` without forming the Jacobian.
pub fn apply_jacobian(p: &RnnParams, h: &[f64], frame: &Matrix) -> Matrix {
    let n = p.n();
    let k = frame.cols();
    assert_eq!(frame.rows(), n);
    let b = 1.0 - p.alpha;
    // rows of the gated frame: diag(relu'(h)) · frame
    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        let o = out.row_mut(i);
        for (j, &w) in p.w_h.row(i).iter().enumerate() {
            if w == 0.0 || h[j] <= 0.0 {
                continue;
            }
            let bw = b * w;
            for (oc, fc) in o.iter_mut().zip(frame.row(j)) {
                *oc += bw * fc;
            }
        }
        for (oc, fc) in o.iter_mut().zip(frame.row(i)) {
            *oc += p.alpha * fc;
        }
    }
    out
}
