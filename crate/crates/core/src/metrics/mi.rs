//! Plug-in mutual information `Î(T; Z)` from a multinomial logistic
//! regression of `T` on standardized `Z`:
//! `Î = (1/n) Σ_i Σ_t p(t|z_i) · ln(p(t|z_i) / p̂(t))`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::loss::log_sum_exp;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    /// Penalty `(l2/2)·‖W‖²` on the weights (not the bias).
    pub l2: f64,
    /// Stop once the largest gradient entry falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-6,
            max_iter: 2000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiFit {
    pub mi: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Target values present, in the order of the fitted classes.
    pub targets: Vec<usize>,
}

/// Per-dimension zero mean and unit variance; constant dimensions become 0.
pub fn standardize(z: &Matrix) -> Matrix {
    let (mean, std) = z.column_stats();
    let mut out = z.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = if std[c] > 1e-12 { (*v - mean[c]) / std[c] } else { 0.0 };
        }
    }
    out
}

struct Problem<'a> {
    z: &'a Matrix,
    t: &'a [usize],
    k: usize,
    l2: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.k * (self.z.cols() + 1)
    }

    fn logits(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let d = self.z.cols();
        for (c, o) in out.iter_mut().enumerate() {
            let w = &theta[c * d..(c + 1) * d];
            *o = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + theta[self.k * d + c];
        }
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (n, d, k) = (self.z.rows(), self.z.cols(), self.k);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut logits = vec![0.0; k];
        let mut loss = 0.0;
        for (i, row) in self.z.iter_rows().enumerate() {
            self.logits(theta, row, &mut logits);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[self.t[i]];
            for c in 0..k {
                let r = (logits[c] - lse).exp() - if c == self.t[i] { 1.0 } else { 0.0 };
                for (g, x) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *g += r * x;
                }
                grad[k * d + c] += r;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let mut penalty = 0.0;
        for (g, w) in grad[..k * d].iter_mut().zip(&theta[..k * d]) {
            *g += self.l2 * w;
            penalty += w * w;
        }
        loss * inv + 0.5 * self.l2 * penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the regression objective with L-BFGS and an Armijo
/// backtracking line search. Returns `(theta, objective, grad_norm, iters)`.
fn lbfgs(p: &Problem, cfg: &MiConfig) -> Result<(Vec<f64>, f64, f64, usize)> {
    let dim = p.dim();
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut f = p.eval(&theta, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    for iter in 0..cfg.max_iter {
        let gnorm = inf_norm(&grad);
        if gnorm < cfg.tol {
            return Ok((theta, f, gnorm, iter));
        }
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(&grad, &grad).sqrt(),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for ((t, th), dv) in trial.iter_mut().zip(&theta).zip(&dir) {
                *t = th + step * dv;
            }
            let ft = p.eval(&trial, &mut trial_grad);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            return Err(Error::Convergence {
                iterations: iter,
                residual: gnorm,
            });
        };
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = ft;
    }
    let gnorm = inf_norm(&grad);
    if gnorm < cfg.tol {
        return Ok((theta, f, gnorm, cfg.max_iter));
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        residual: gnorm,
    })
}

pub fn fit_mutual_information(z: &Matrix, targets: &[usize], cfg: &MiConfig) -> Result<MiFit> {
    if z.rows() != targets.len() {
        return dim_err(format!("{} representations but {} targets", z.rows(), targets.len()));
    }
    if !z.is_finite() {
        return Err(Error::Input("non-finite representation".into()));
    }
    if !(cfg.l2 >= 0.0 && cfg.tol > 0.0 && cfg.memory > 0) {
        return Err(Error::Config("MI regression needs l2 >= 0, tol > 0, memory > 0".into()));
    }
    let mut present: Vec<usize> = targets.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Input(format!(
            "mutual information needs at least two target values, found {}",
            present.len()
        )));
    }
    let t: Vec<usize> = targets
        .iter()
        .map(|v| present.binary_search(v).expect("value is present"))
        .collect();
    let k = present.len();
    let n = t.len();
    let zs = standardize(z);
    let problem = Problem { z: &zs, t: &t, k, l2: cfg.l2 };
    let (theta, objective, grad_norm, iterations) = lbfgs(&problem, cfg)?;

    let mut prior = vec![0.0; k];
    for &c in &t {
        prior[c] += 1.0 / n as f64;
    }
    let mut logits = vec![0.0; k];
    let mut total = 0.0;
    for row in zs.iter_rows() {
        problem.logits(&theta, row, &mut logits);
        let lse = log_sum_exp(&logits);
        for c in 0..k {
            let lp = logits[c] - lse;
            let p = lp.exp();
            if p > 0.0 {
                total += p * (lp - prior[c].ln());
            }
        }
    }
    Ok(MiFit {
        mi: total / n as f64,
        objective,
        grad_norm,
        iterations,
        targets: present,
    })
}

pub fn mutual_information(z: &Matrix, targets: &[usize], cfg: &MiConfig) -> Result<f64> {
    fit_mutual_information(z, targets, cfg).map(|f| f.mi)
}
