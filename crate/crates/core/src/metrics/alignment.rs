//! Cross-group representation alignment: mean pairwise Euclidean distance
//! between encoder outputs of two same-class groups, and its per-class max.

use crate::data::{Group, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::losses::mean_pairwise_distance;
use crate::metrics::accuracy::EVAL_BLOCK;
use crate::nn::{l2_normalize_rows, Matrix, MlpModel};

/// Encoder outputs of one split, bucketed by group.
#[derive(Debug, Clone)]
pub struct RepresentationView {
    pub split: Split,
    pub classes: usize,
    pub num_attributes: usize,
    /// Rows in `ds.indices(split)` order.
    pub reps: Matrix,
    pub logits: Matrix,
    /// Dataset indices of the split, aligned with `reps` rows.
    pub idx: Vec<usize>,
    /// Row positions into `reps` for every group id.
    pub members: Vec<Vec<usize>>,
}

impl RepresentationView {
    /// `normalized` switches to unit-norm representations.
    pub fn new(model: &MlpModel, ds: &LabeledDataset, split: Split, normalized: bool) -> Result<Self> {
        let idx = ds.indices(split);
        let (reps, logits) = model.forward_blocked(&ds.gather(&idx), EVAL_BLOCK)?;
        let reps = if normalized {
            l2_normalize_rows(&reps).rows
        } else {
            reps
        };
        Ok(Self::from_parts(ds, split, idx, reps, logits))
    }

    pub fn from_parts(ds: &LabeledDataset, split: Split, idx: Vec<usize>, reps: Matrix, logits: Matrix) -> Self {
        let mut members = vec![Vec::new(); ds.num_groups()];
        for (row, &i) in idx.iter().enumerate() {
            members[ds.group_id(i)].push(row);
        }
        Self {
            split,
            classes: ds.classes,
            num_attributes: ds.num_attributes,
            reps,
            logits,
            idx,
            members,
        }
    }

    fn group_id(&self, g: Group) -> usize {
        g.y * self.num_attributes + g.a
    }

    pub fn group_reps(&self, g: Group) -> Matrix {
        self.reps.select_rows(&self.members[self.group_id(g)])
    }

    /// `(1/|G||G'|) Σ_{x∈G} Σ_{x'∈G'} ‖f(x) − f(x')‖₂`
    pub fn alignment(&self, g: Group, h: Group) -> Result<f64> {
        if g.y != h.y {
            return Err(Error::Input(format!(
                "alignment compares groups of one class, got classes {} and {}",
                g.y, h.y
            )));
        }
        if g.a == h.a {
            return Err(Error::Input("alignment needs two distinct attributes".into()));
        }
        if g.y >= self.classes || g.a >= self.num_attributes || h.a >= self.num_attributes {
            return Err(Error::Input("group out of range".into()));
        }
        let (gm, hm) = (&self.members[self.group_id(g)], &self.members[self.group_id(h)]);
        if gm.is_empty() || hm.is_empty() {
            return Err(Error::Input(format!("empty group in pair {g:?}, {h:?}")));
        }
        Ok(mean_pairwise_distance(&self.reps.select_rows(gm), &self.reps.select_rows(hm)))
    }

    /// Nonempty groups of class `y`.
    pub fn groups_of_class(&self, y: usize) -> Vec<Group> {
        (0..self.num_attributes)
            .map(|a| Group { y, a })
            .filter(|&g| !self.members[self.group_id(g)].is_empty())
            .collect()
    }

    /// Largest alignment loss over distinct nonempty group pairs of class `y`.
    pub fn class_alignment(&self, y: usize) -> Result<f64> {
        let groups = self.groups_of_class(y);
        if groups.len() < 2 {
            return Err(Error::Undefined(format!(
                "class {y} has {} nonempty groups; alignment needs two",
                groups.len()
            )));
        }
        let mut worst = f64::NEG_INFINITY;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                worst = worst.max(self.alignment(groups[i], groups[j])?);
            }
        }
        Ok(worst)
    }

    /// Per-class alignment; `None` for classes with fewer than two groups.
    pub fn per_class_alignment(&self) -> Vec<Option<f64>> {
        (0..self.classes).map(|y| self.class_alignment(y).ok()).collect()
    }
}

pub fn alignment_loss(model: &MlpModel, ds: &LabeledDataset, split: Split, g: Group, h: Group) -> Result<f64> {
    RepresentationView::new(model, ds, split, false)?.alignment(g, h)
}

pub fn class_alignment(model: &MlpModel, ds: &LabeledDataset, split: Split, y: usize) -> Result<f64> {
    RepresentationView::new(model, ds, split, false)?.class_alignment(y)
}
