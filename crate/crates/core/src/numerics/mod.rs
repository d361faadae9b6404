//! Dense linear algebra and seeded randomness shared by every other module.

mod matrix;
mod qr;
mod rng;

pub use matrix::{axpy, dot, norm2, Matrix};
pub use qr::{qr_backward, qr_decompose, thin_qr, Qr, RANK_TOL};
pub use rng::{gaussian_matrix, RngStream};
