use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::rnn::RnnParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(p: &RnnParams) -> Self {
        Self::with_config(p, AdamConfig::default())
    }

    pub fn with_config(p: &RnnParams, config: AdamConfig) -> Self {
        Self {
            m: Gradients::zeros_like(p),
            v: Gradients::zeros_like(p),
            t: 0,
            config,
        }
    }

    /// One optimizer step on all three weight groups.
    pub fn update(&mut self, p: &mut RnnParams, g: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let params = [&mut p.w_h, &mut p.w_x, &mut p.w_out];
        let ms = self.m.parts_mut();
        let vs = self.v.parts_mut();
        for (((w, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(g.parts()) {
            for (((wi, mi), vi), &gi) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
