//! Supervised contrastive loss, its two-sided batch form, the joint
//! contrastive + cross-entropy objective and the direct alignment objective.
//!
//! Every function returns exact gradients. Contrastive logits are
//! `z_a·z_j / τ` over unit vectors; log-sum-exp subtracts the max first
//! since small temperatures push logits to `1/τ`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::matrix::{dot, euclidean};
use crate::nn::{
    cross_entropy, l2_normalize_backward, l2_normalize_rows, GradientStore, Matrix, MlpModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `λ·L_con + (1−λ)·L_ce`.
    Cnc,
    /// `λ·L_align + (1−λ)·L_ce` with the mean anchor/positive distance.
    DirectAlign,
    CeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub objective: Objective,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            lambda: 0.75,
            objective: Objective::Cnc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_positives: Matrix,
    pub d_negatives: Matrix,
}

/// `−(1/M) Σ_m log[ e^{z·z⁺_m/τ} / (Σ_m e^{z·z⁺_m/τ} + Σ_n e^{z·z⁻_n/τ}) ]`
pub fn supcon_loss(
    anchor: &[f64],
    positives: &Matrix,
    negatives: &Matrix,
    tau: f64,
) -> Result<SupConOutput> {
    let d = anchor.len();
    if positives.rows() == 0 {
        return Err(Error::Input("at least one positive is required".into()));
    }
    if positives.cols() != d || (negatives.rows() > 0 && negatives.cols() != d) {
        return dim_err("anchor, positives and negatives must share a dimension");
    }
    if !(tau > 0.0) {
        return Err(Error::Input("temperature must be > 0".into()));
    }
    if !anchor.iter().all(|v| v.is_finite()) || !positives.is_finite() || !negatives.is_finite() {
        return Err(Error::Input("non-finite representation".into()));
    }
    let m = positives.rows();
    let logits: Vec<f64> = positives
        .iter_rows()
        .chain(negatives.iter_rows())
        .map(|u| dot(anchor, u) / tau)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let mean_pos = logits[..m].iter().sum::<f64>() / m as f64;
    let loss = lse - mean_pos;

    // ∂L/∂s_j = softmax_j − [j positive]/M
    let ds: Vec<f64> = exps
        .iter()
        .enumerate()
        .map(|(j, e)| e / sum - if j < m { 1.0 / m as f64 } else { 0.0 })
        .collect();
    let mut d_anchor = vec![0.0; d];
    let mut d_positives = Matrix::zeros(m, d);
    let mut d_negatives = Matrix::zeros(negatives.rows(), negatives.cols().max(d));
    for (j, u) in positives.iter_rows().chain(negatives.iter_rows()).enumerate() {
        let g = ds[j] / tau;
        for (da, &ui) in d_anchor.iter_mut().zip(u) {
            *da += g * ui;
        }
        let row = if j < m {
            d_positives.row_mut(j)
        } else {
            d_negatives.row_mut(j - m)
        };
        for (r, &ai) in row.iter_mut().zip(anchor) {
            *r = g * ai;
        }
    }
    Ok(SupConOutput {
        loss,
        d_anchor,
        d_positives,
        d_negatives,
    })
}

#[derive(Debug, Clone)]
pub struct TwoSidedOutput {
    pub loss: f64,
    pub left: f64,
    pub right: f64,
    pub d_anchors: Matrix,
    pub d_positives: Matrix,
    pub d_negatives: Matrix,
    pub d_negatives2: Matrix,
}

/// `supcon(a₁; {p}; {n}) + supcon(p₁; {a}; {n'})` over unit-norm rows.
/// With `two_sided = false` only the first term is used.
pub fn two_sided_loss(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    negatives2: &Matrix,
    tau: f64,
    two_sided: bool,
) -> Result<TwoSidedOutput> {
    if anchors.rows() == 0 || positives.rows() == 0 {
        return dim_err("two-sided loss needs at least one anchor and one positive");
    }
    let d = anchors.cols();
    for m in [positives, negatives, negatives2] {
        if m.rows() > 0 && m.cols() != d {
            return dim_err("all batch representations must share a dimension");
        }
    }
    let left = supcon_loss(anchors.row(0), positives, negatives, tau)?;
    let mut d_anchors = Matrix::zeros(anchors.rows(), d);
    d_anchors.row_mut(0).copy_from_slice(&left.d_anchor);
    let mut d_positives = left.d_positives;
    let d_negatives = left.d_negatives;
    let mut d_negatives2 = Matrix::zeros(negatives2.rows(), d);
    let mut right_loss = 0.0;
    if two_sided {
        let right = supcon_loss(positives.row(0), anchors, negatives2, tau)?;
        right_loss = right.loss;
        for (a, b) in d_positives.row_mut(0).iter_mut().zip(&right.d_anchor) {
            *a += b;
        }
        d_anchors.add_assign(&right.d_positives)?;
        d_negatives2 = right.d_negatives;
    }
    Ok(TwoSidedOutput {
        loss: left.loss + right_loss,
        left: left.loss,
        right: right_loss,
        d_anchors,
        d_positives,
        d_negatives,
        d_negatives2,
    })
}

/// Row layout of a gathered contrastive batch:
/// `[anchors (M); positives (M); negatives (N); negatives2 (N)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchLayout {
    pub m: usize,
    pub n: usize,
    pub two_sided: bool,
}

impl BatchLayout {
    pub fn rows(&self) -> usize {
        2 * self.m + 2 * self.n
    }

    fn parts(&self, x: &Matrix) -> [Matrix; 4] {
        let (m, n) = (self.m, self.n);
        [
            x.slice_rows(0, m),
            x.slice_rows(m, 2 * m),
            x.slice_rows(2 * m, 2 * m + n),
            x.slice_rows(2 * m + n, 2 * m + 2 * n),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct JointLossOutput {
    pub loss: f64,
    /// Contrastive (or alignment) term before weighting.
    pub representation_term: f64,
    pub cross_entropy: f64,
    pub grads: GradientStore,
}

/// Mean Euclidean distance over all pairs `(a, b)` with `a` a row of `left`
/// and `b` a row of `right`.
pub fn mean_pairwise_distance(left: &Matrix, right: &Matrix) -> f64 {
    let mut total = 0.0;
    for a in left.iter_rows() {
        for b in right.iter_rows() {
            total += euclidean(a, b);
        }
    }
    total / (left.rows() * right.rows()) as f64
}

fn mean_pairwise_distance_grad(left: &Matrix, right: &Matrix) -> (f64, Matrix, Matrix) {
    let scale = 1.0 / (left.rows() * right.rows()) as f64;
    let mut dl = Matrix::zeros(left.rows(), left.cols());
    let mut dr = Matrix::zeros(right.rows(), right.cols());
    let mut total = 0.0;
    for i in 0..left.rows() {
        for j in 0..right.rows() {
            let (a, b) = (left.row(i), right.row(j));
            let dist = euclidean(a, b);
            total += dist;
            if dist == 0.0 {
                continue;
            }
            for k in 0..a.len() {
                let g = scale * (a[k] - b[k]) / dist;
                dl.row_mut(i)[k] += g;
                dr.row_mut(j)[k] -= g;
            }
        }
    }
    (total * scale, dl, dr)
}

/// The stage-2 training objective on one gathered batch.
///
/// The contrastive term sees row-normalized encoder outputs (after the
/// projection head, if the model has one); the cross-entropy term sees the
/// logits of the unnormalized outputs and averages over every batch row.
pub fn joint_loss(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    layout: BatchLayout,
    cfg: &LossConfig,
) -> Result<JointLossOutput> {
    cfg.validate()?;
    if features.rows() != layout.rows() || labels.len() != layout.rows() {
        return dim_err(format!(
            "batch has {} rows and {} labels, layout expects {}",
            features.rows(),
            labels.len(),
            layout.rows()
        ));
    }
    let cache = model.forward_cached(features)?;
    let reps = cache.representations(features);
    let (ce, d_logits) = cross_entropy(&cache.logits, labels)?;
    let mut grads = GradientStore::zeros_like(model);

    let lambda = match cfg.objective {
        Objective::CeOnly => 0.0,
        _ => cfg.lambda,
    };
    let mut rep_term = 0.0;
    let mut d_repr: Option<Matrix> = None;
    match cfg.objective {
        Objective::CeOnly => {}
        Objective::Cnc => {
            let proj = model.project(reps)?;
            let head_out = proj.output(reps);
            let normed = l2_normalize_rows(head_out);
            let [a, p, n1, n2] = layout.parts(&normed.rows);
            let out = two_sided_loss(&a, &p, &n1, &n2, cfg.tau, layout.two_sided)?;
            rep_term = out.loss;
            if lambda != 0.0 {
                let mut d_norm = Matrix::vstack(&[
                    &out.d_anchors,
                    &out.d_positives,
                    &out.d_negatives,
                    &out.d_negatives2,
                ])?;
                d_norm.scale(lambda);
                let d_head = l2_normalize_backward(&normed, &d_norm);
                d_repr = Some(if model.has_projection() {
                    model.project_backward(reps, &proj, &d_head, &mut grads)?
                } else {
                    d_head
                });
            }
        }
        Objective::DirectAlign => {
            let m = layout.m;
            let anchors = reps.slice_rows(0, m);
            let positives = reps.slice_rows(m, 2 * m);
            let (dist, da, dp) = mean_pairwise_distance_grad(&anchors, &positives);
            rep_term = dist;
            if lambda != 0.0 {
                let mut d = Matrix::zeros(reps.rows(), reps.cols());
                for i in 0..m {
                    for (o, g) in d.row_mut(i).iter_mut().zip(da.row(i)) {
                        *o = lambda * g;
                    }
                    for (o, g) in d.row_mut(m + i).iter_mut().zip(dp.row(i)) {
                        *o = lambda * g;
                    }
                }
                d_repr = Some(d);
            }
        }
    }

    let ce_weight = 1.0 - lambda;
    let d_logits = (ce_weight != 0.0).then(|| d_logits.scaled(ce_weight));
    model.backward_into(features, &cache, d_repr.as_ref(), d_logits.as_ref(), &mut grads)?;
    Ok(JointLossOutput {
        loss: lambda * rep_term + ce_weight * ce,
        representation_term: rep_term,
        cross_entropy: ce,
        grads,
    })
}

/// [`joint_loss`] with the direct-alignment objective forced on.
pub fn direct_align_loss(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    layout: BatchLayout,
    cfg: &LossConfig,
) -> Result<JointLossOutput> {
    let cfg = LossConfig {
        objective: Objective::DirectAlign,
        ..*cfg
    };
    joint_loss(model, features, labels, layout, &cfg)
}
