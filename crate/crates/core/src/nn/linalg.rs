//! Row normalization and spectral norm by power iteration.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

pub const MIN_ROW_NORM: f64 = 1e-12;

/// Unit-normalized rows plus, per row, whether it was too small to normalize
/// (such rows are returned unchanged).
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    pub rows: Matrix,
    pub norms: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn l2_normalize_rows(m: &Matrix) -> NormalizedRows {
    let mut rows = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    let mut degenerate = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = rows.row_mut(r);
        let norm = dot(row, row).sqrt();
        norms.push(norm);
        if norm < MIN_ROW_NORM {
            degenerate.push(true);
        } else {
            degenerate.push(false);
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    NormalizedRows {
        rows,
        norms,
        degenerate,
    }
}

/// Pulls a gradient on normalized rows `z = r/‖r‖` back to the raw rows:
/// `∂r = (∂z − z·(z·∂z)) / ‖r‖`. Degenerate rows pass the gradient through.
pub fn l2_normalize_backward(norm: &NormalizedRows, d_normalized: &Matrix) -> Matrix {
    let mut out = d_normalized.clone();
    for r in 0..out.rows() {
        if norm.degenerate[r] {
            continue;
        }
        let z = norm.rows.row(r);
        let proj = dot(z, d_normalized.row(r));
        let inv = 1.0 / norm.norms[r];
        for (o, &zi) in out.row_mut(r).iter_mut().zip(z) {
            *o = (*o - zi * proj) * inv;
        }
    }
    out
}

/// Largest singular value of `w` by power iteration on `WᵀW`.
///
/// Stops when successive estimates differ by less than `tol` relative.
pub fn spectral_norm(w: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Input("spectral_norm tolerance must be > 0".into()));
    }
    let (rows, cols) = w.shape();
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    // Deterministic, non-degenerate start: all-ones plus a small ramp so the
    // start is unlikely to be orthogonal to the top singular vector.
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 0.01 * i as f64).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let u: Vec<f64> = (0..rows).map(|r| dot(w.row(r), &v)).collect();
        let mut next = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (n, &wv) in next.iter_mut().zip(w.row(r)) {
                *n += wv * ur;
            }
        }
        let norm = normalize(&mut next);
        if norm == 0.0 {
            // v fell into the null space; W is zero along every direction tried.
            return Ok(0.0);
        }
        // ‖WᵀW v‖ → σ² as v converges.
        let estimate = norm.sqrt();
        let converged = (estimate - sigma).abs() <= tol * estimate.max(f64::MIN_POSITIVE);
        sigma = estimate;
        v = next;
        if converged {
            return Ok(sigma);
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: sigma,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
