//! Certifies, on one evaluation split, the per-class inequality
//!
//! `L_wg(f; y) − L_avg(f; y) ≤ B·C1·L̂_align(f; y) + max_{g∈G_y} C2·√(8·ln(|G_y|/δ)/n_g)`
//!
//! and its cross-class extension
//!
//! `L_wg(f) ≤ L_avg(f)/min_y q_y + B·C1·max_y L̂_align(f; y) + max_{g∈G} C2·√(8·ln(|G|/δ)/n_g)`.
//!
//! Losses are per-sample cross-entropy clipped at `loss_cap`, so `C2 = loss_cap`.
//! `C1 = √2` bounds `‖softmax − onehot‖₂`, the gradient of cross-entropy in
//! the logits. `B` is the spectral norm of the classifier weight.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::alignment::RepresentationView;
use crate::nn::{per_sample_cross_entropy, spectral_norm, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub delta: f64,
    pub loss_cap: f64,
    pub spectral_tol: f64,
    pub spectral_max_iter: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            loss_cap: 5.0,
            spectral_tol: 1e-12,
            spectral_max_iter: 100_000,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if !(self.loss_cap > 0.0 && self.loss_cap.is_finite()) {
            return Err(Error::Config("loss_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBound {
    pub y: usize,
    /// Nonempty groups of this class in the split.
    pub groups: usize,
    pub worst_group_loss: f64,
    pub avg_loss: f64,
    pub lhs: f64,
    /// Zero when the class has a single nonempty group.
    pub alignment: f64,
    pub concentration: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBound {
    pub worst_group_loss: f64,
    pub avg_loss: f64,
    pub min_class_prior: f64,
    pub max_alignment: f64,
    pub concentration: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub split: Split,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub per_class: Vec<ClassBound>,
    pub global: GlobalBound,
    /// Group ids with no sample in the split; left out of every term.
    pub omitted_groups: Vec<usize>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.per_class.iter().all(|c| c.holds) && self.global.holds
    }
}

fn concentration(c2: f64, groups: usize, delta: f64, n_g: usize) -> f64 {
    c2 * (8.0 * (groups as f64 / delta).ln() / n_g as f64).sqrt()
}

/// The checker on precomputed representations and logits. `b` is the
/// classifier's spectral norm.
pub fn bound_from_view(
    view: &RepresentationView,
    labels: &[usize],
    b: f64,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    cfg.validate()?;
    if view.idx.is_empty() {
        return Err(Error::Input(format!("split '{}' is empty", view.split)));
    }
    let c1 = 2f64.sqrt();
    let c2 = cfg.loss_cap;
    let losses: Vec<f64> = per_sample_cross_entropy(&view.logits, labels)?
        .into_iter()
        .map(|l| l.min(cfg.loss_cap))
        .collect();
    let group_loss = |rows: &[usize]| rows.iter().map(|&r| losses[r]).sum::<f64>() / rows.len() as f64;

    let a = view.num_attributes;
    let omitted_groups: Vec<usize> = (0..view.members.len()).filter(|&g| view.members[g].is_empty()).collect();
    let total_groups = view.members.len() - omitted_groups.len();
    let n = view.idx.len();

    let mut per_class = Vec::new();
    let mut class_counts = Vec::new();
    for y in 0..view.classes {
        let groups: Vec<usize> = (0..a).map(|k| y * a + k).filter(|&g| !view.members[g].is_empty()).collect();
        if groups.is_empty() {
            continue;
        }
        let n_y: usize = groups.iter().map(|&g| view.members[g].len()).sum();
        class_counts.push(n_y);
        let worst = groups
            .iter()
            .map(|&g| group_loss(&view.members[g]))
            .fold(f64::NEG_INFINITY, f64::max);
        let avg = groups
            .iter()
            .flat_map(|&g| view.members[g].iter())
            .map(|&r| losses[r])
            .sum::<f64>()
            / n_y as f64;
        let alignment = if groups.len() >= 2 { view.class_alignment(y)? } else { 0.0 };
        let conc = groups
            .iter()
            .map(|&g| concentration(c2, groups.len(), cfg.delta, view.members[g].len()))
            .fold(0.0, f64::max);
        let rhs = b * c1 * alignment + conc;
        let lhs = worst - avg;
        per_class.push(ClassBound {
            y,
            groups: groups.len(),
            worst_group_loss: worst,
            avg_loss: avg,
            lhs,
            alignment,
            concentration: conc,
            rhs,
            holds: lhs <= rhs,
        });
    }

    let worst = (0..view.members.len())
        .filter(|&g| !view.members[g].is_empty())
        .map(|g| group_loss(&view.members[g]))
        .fold(f64::NEG_INFINITY, f64::max);
    let avg = losses.iter().sum::<f64>() / n as f64;
    let min_q = class_counts.iter().copied().min().unwrap_or(n) as f64 / n as f64;
    let max_alignment = per_class.iter().map(|c| c.alignment).fold(0.0, f64::max);
    let conc = view
        .members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| concentration(c2, total_groups, cfg.delta, m.len()))
        .fold(0.0, f64::max);
    let rhs = avg / min_q + b * c1 * max_alignment + conc;
    Ok(BoundReport {
        split: view.split,
        b,
        c1,
        c2,
        delta: cfg.delta,
        per_class,
        global: GlobalBound {
            worst_group_loss: worst,
            avg_loss: avg,
            min_class_prior: min_q,
            max_alignment,
            concentration: conc,
            rhs,
            holds: worst <= rhs,
        },
        omitted_groups,
    })
}

pub fn check_bound(model: &MlpModel, ds: &LabeledDataset, split: Split, cfg: &BoundConfig) -> Result<BoundReport> {
    let view = RepresentationView::new(model, ds, split, false)?;
    let b = spectral_norm(&model.classifier.weight, cfg.spectral_tol, cfg.spectral_max_iter)?;
    bound_from_view(&view, &ds.labels_of(&view.idx), b, cfg)
}
