use serde::{Deserialize, Serialize};

use crate::data::{Group, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{per_sample_cross_entropy, Matrix, MlpModel};

/// Rows per forward block during evaluation.
pub const EVAL_BLOCK: usize = 2048;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &Matrix) -> Vec<usize> {
    logits.iter_rows().map(argmax).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: Group,
    pub group_id: usize,
    pub n: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub split: Split,
    pub n: usize,
    /// Nonempty groups only, by group id.
    pub per_group: Vec<GroupStat>,
    /// Group ids with no sample in this split.
    pub missing_groups: Vec<usize>,
    pub avg_acc: f64,
    pub worst_group_acc: f64,
    pub avg_loss: f64,
    pub worst_group_loss: f64,
}

impl AccuracyReport {
    pub fn best_group_acc(&self) -> f64 {
        self.per_group
            .iter()
            .map(|g| g.accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn group(&self, group_id: usize) -> Option<&GroupStat> {
        self.per_group.iter().find(|g| g.group_id == group_id)
    }
}

/// Per-group accuracy and cross-entropy from precomputed logits for the
/// rows `idx` of `ds` (in the same order).
pub fn accuracy_from_logits(
    ds: &LabeledDataset,
    split: Split,
    idx: &[usize],
    logits: &Matrix,
) -> Result<AccuracyReport> {
    if idx.is_empty() {
        return Err(Error::Input(format!("split '{split}' is empty")));
    }
    let labels = ds.labels_of(idx);
    let losses = per_sample_cross_entropy(logits, &labels)?;
    let preds = predictions(logits);
    let k = ds.num_groups();
    let mut n_g = vec![0usize; k];
    let mut correct_g = vec![0usize; k];
    let mut loss_g = vec![0.0; k];
    for (j, &i) in idx.iter().enumerate() {
        let g = ds.group_id(i);
        n_g[g] += 1;
        loss_g[g] += losses[j];
        if preds[j] == labels[j] {
            correct_g[g] += 1;
        }
    }
    let mut per_group = Vec::new();
    let mut missing_groups = Vec::new();
    for g in 0..k {
        if n_g[g] == 0 {
            missing_groups.push(g);
            continue;
        }
        per_group.push(GroupStat {
            group: ds.group_of_id(g),
            group_id: g,
            n: n_g[g],
            accuracy: correct_g[g] as f64 / n_g[g] as f64,
            mean_loss: loss_g[g] / n_g[g] as f64,
        });
    }
    let n = idx.len();
    let correct: usize = correct_g.iter().sum();
    Ok(AccuracyReport {
        split,
        n,
        avg_acc: correct as f64 / n as f64,
        worst_group_acc: per_group.iter().map(|g| g.accuracy).fold(f64::INFINITY, f64::min),
        avg_loss: losses.iter().sum::<f64>() / n as f64,
        worst_group_loss: per_group
            .iter()
            .map(|g| g.mean_loss)
            .fold(f64::NEG_INFINITY, f64::max),
        per_group,
        missing_groups,
    })
}

pub fn group_accuracy(model: &MlpModel, ds: &LabeledDataset, split: Split) -> Result<AccuracyReport> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::Input(format!("split '{split}' is empty")));
    }
    let (_, logits) = model.forward_blocked(&ds.gather(&idx), EVAL_BLOCK)?;
    accuracy_from_logits(ds, split, &idx, &logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n_per: usize) -> LabeledDataset {
        let mut labels = Vec::new();
        let mut attrs = Vec::new();
        for y in 0..5 {
            for a in 0..5 {
                for _ in 0..n_per {
                    labels.push(y);
                    attrs.push(a);
                }
            }
        }
        let n = labels.len();
        LabeledDataset::new(
            "bal",
            Matrix::zeros(n, 1),
            labels,
            attrs,
            vec![Split::Test; n],
            5,
            5,
        )
        .unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn perfect_classifier() {
        let ds = balanced(2);
        let idx = ds.indices(Split::Test);
        let mut logits = Matrix::zeros(idx.len(), 5);
        for (j, &i) in idx.iter().enumerate() {
            logits.set(j, ds.labels[i], 50.0);
        }
        let r = accuracy_from_logits(&ds, Split::Test, &idx, &logits).unwrap();
        assert_eq!(r.avg_acc, 1.0);
        assert_eq!(r.worst_group_acc, 1.0);
        assert!(r.missing_groups.is_empty());
    }

    #[test]
    fn constant_classifier() {
        let ds = balanced(3);
        let idx = ds.indices(Split::Test);
        let mut logits = Matrix::zeros(idx.len(), 5);
        for j in 0..idx.len() {
            logits.set(j, 0, 1.0);
        }
        let r = accuracy_from_logits(&ds, Split::Test, &idx, &logits).unwrap();
        assert!((r.avg_acc - 0.2).abs() < 1e-12);
        assert_eq!(r.worst_group_acc, 0.0);
        assert!(r.worst_group_acc <= r.avg_acc && r.avg_acc <= r.best_group_acc());
    }

    #[test]
    fn empty_groups_are_reported_missing() {
        let ds = LabeledDataset::new(
            "m",
            Matrix::zeros(2, 1),
            vec![0, 1],
            vec![0, 1],
            vec![Split::Val; 2],
            2,
            2,
        )
        .unwrap();
        let idx = ds.indices(Split::Val);
        let r = accuracy_from_logits(&ds, Split::Val, &idx, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(r.missing_groups, vec![1, 2]);
        assert_eq!(r.per_group.len(), 2);
        assert!(accuracy_from_logits(&ds, Split::Test, &[], &Matrix::zeros(0, 2)).is_err());
    }
}
