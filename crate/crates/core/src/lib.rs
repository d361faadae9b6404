//! Leaky ReLU recurrent networks trained with exact (BPTT) and truncated
//! (e-prop) gradients, Lyapunov spectrum estimation, and gradient-flossing
//! pretraining, plus the sweep harness that ties them together.
//!
//! Module map:
//!
//! - [`numerics`]: matrices, Householder QR and its adjoint, seeded RNG.
//! - [`rnn`]: parameters, the leaky update, forward simulation, state Jacobian, checkpoints.
//! - [`tasks`]: Romo, two-alternative forced choice and delayed match-to-sample generators.
//! - [`learning`]: masked MSE, BPTT, eligibility-trace gradients, Adam.
//! - [`lyapunov`]: QR-based (Benettin) exponent estimation.
//! - [`flossing`]: the Σλ² loss, its locality-truncated gradient, pretraining.
//! - [`harness`]: training loops, learning-rate selection, sweeps, CSV/SVG output.

pub mod container;
mod error;
pub mod flossing;
pub mod harness;
pub mod learning;
pub mod lyapunov;
pub mod numerics;
pub mod rnn;
pub mod tasks;

pub use error::{Error, Result};
