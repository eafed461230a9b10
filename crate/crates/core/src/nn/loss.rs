//! Softmax cross-entropy.

use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

/// Numerically stable softmax of one row of logits.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(v)` with the max subtracted first.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return dim_err(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Per-row `−log softmax(logits)[label]`.
pub fn per_sample_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .collect())
}

/// Mean cross-entropy over rows and its gradient `(softmax − onehot) / n`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    weighted_cross_entropy(logits, labels, None)
}

/// Cross-entropy where row `i` contributes with weight `w[i]` (default `1/n`).
pub fn weighted_cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    check_labels(logits, labels)?;
    let n = logits.rows();
    if let Some(w) = weights {
        if w.len() != n {
            return dim_err("one weight per row required");
        }
    }
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        let w = weights.map_or(1.0 / n as f64, |w| w[i]);
        let p = softmax_row(row);
        loss += w * (log_sum_exp(row) - row[y]);
        let g = grad.row_mut(i);
        for (c, (gc, pc)) in g.iter_mut().zip(&p).enumerate() {
            *gc = w * (pc - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}
