//! Householder QR with a non-negative diagonal on `R`, and its reverse-mode adjoint.

use super::matrix::{dot, norm2};
use super::Matrix;
use crate::{Error, Result};

/// Diagonal magnitude below which a factorization is flagged rank deficient.
pub const RANK_TOL: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct Qr {
    /// `m × n` with orthonormal columns.
    pub q: Matrix,
    /// `n × n` upper triangular, diagonal ≥ 0.
    pub r: Matrix,
    pub rank_deficient: bool,
}

/// QR of a square matrix.
pub fn qr_decompose(m: &Matrix) -> Result<Qr> {
    if m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "qr_decompose expects a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(householder(m))
}

/// Reduced QR of a tall matrix (`rows ≥ cols`).
pub fn thin_qr(m: &Matrix) -> Result<Qr> {
    if m.rows() < m.cols() {
        return Err(Error::Shape(format!(
            "thin_qr expects rows >= cols, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(householder(m))
}

fn householder(a: &Matrix) -> Qr {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &cols[k][k..];
        let norm = norm2(x);
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vn = norm2(&v);
        v.iter_mut().for_each(|e| *e /= vn);
        for col in cols.iter_mut().skip(k + 1) {
            let tail = &mut col[k..];
            let s = 2.0 * dot(&v, tail);
            tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
        }
        cols[k][k] = alpha;
        cols[k][k + 1..].iter_mut().for_each(|e| *e = 0.0);
        reflectors.push(Some(v));
    }

    let mut r = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..=j {
            r[(i, j)] = col[i];
        }
    }

    // Q = H_0 H_1 … H_{n-1} [I_n; 0]
    let mut q_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (k, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        for col in q_cols.iter_mut() {
            let tail = &mut col[k..];
            let s = 2.0 * dot(v, tail);
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
        }
    }

    let mut q = Matrix::zeros(m, n);
    for (j, col) in q_cols.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            q[(i, j)] = val;
        }
    }

    let mut rank_deficient = false;
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
        if r[(i, i)].abs() < RANK_TOL {
            rank_deficient = true;
        }
    }

    Qr {
        q,
        r,
        rank_deficient,
    }
}

/// Reverse-mode adjoint of the reduced QR `A = QR` (`m ≥ n`, full column rank).
///
/// Given cotangents `q_bar` (m×n) and `r_bar` (n×n), returns `A_bar`:
///
/// ```text
/// M     = R R̄ᵀ − Q̄ᵀ Q
/// A_bar = (Q̄ + Q · copyltu(M)) · R⁻ᵀ
/// ```
///
/// where `copyltu` mirrors the lower triangle of `M` onto its upper triangle.
pub fn qr_backward(q: &Matrix, r: &Matrix, q_bar: &Matrix, r_bar: &Matrix) -> Matrix {
    let (m, n) = q.shape();
    assert_eq!(r.shape(), (n, n));
    assert_eq!(q_bar.shape(), (m, n));
    assert_eq!(r_bar.shape(), (n, n));

    let mut mm = r.matmul(&r_bar.transpose());
    mm.add_scaled(-1.0, &q_bar.transpose().matmul(q));
    for i in 0..n {
        for j in i + 1..n {
            mm[(i, j)] = mm[(j, i)];
        }
    }
    let mut b = q.matmul(&mm);
    b.add_scaled(1.0, q_bar);

    // X Rᵀ = B, row by row, back substitution on the upper-triangular R
    let mut x = Matrix::zeros(m, n);
    for p in 0..m {
        for i in (0..n).rev() {
            let mut acc = b[(p, i)];
            for j in i + 1..n {
                acc -= x[(p, j)] * r[(i, j)];
            }
            x[(p, i)] = acc / r[(i, i)];
        }
    }
    x
}
