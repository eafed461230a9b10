//! Reference methods: JTT-style upsampling of stage-1 errors, online group
//! DRO with true group labels, and CnC with oracle pseudo labels.

use serde::{Deserialize, Serialize};

use crate::cnc::{train_cnc, CncConfig, CncOutput};
use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{per_sample_cross_entropy, weighted_cross_entropy, GradientStore, Matrix, MlpModel, ModelConfig};
use crate::stage1::{init_model, oracle_inference, GroupInference};
use crate::train::{fit_epochs, fit_minibatch, TrainOutput, TrainRecipe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsamplePolicy {
    /// Every misclassified point appears this many times in total.
    Factor(usize),
    /// Within each stage-1 prediction, repeat misclassified points so they
    /// match the correctly classified ones in number.
    AutoBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JttSummary {
    pub correct: usize,
    pub incorrect: usize,
    /// Repetition factor per stage-1 prediction value.
    pub factors: Vec<usize>,
    pub multiset_size: usize,
    /// Set when there was nothing to upsample.
    pub degenerate: bool,
}

/// Train indices with each misclassified point repeated per `policy`.
/// Originals come first in split order, extra copies after.
pub fn jtt_multiset(ds: &LabeledDataset, inference: &GroupInference, policy: UpsamplePolicy) -> Result<(Vec<usize>, JttSummary)> {
    if inference.split != Split::Train {
        return Err(Error::Input("JTT needs stage-1 predictions on the train split".into()));
    }
    let c = ds.classes;
    let mut correct_by = vec![0usize; c];
    let mut wrong_by = vec![0usize; c];
    for (&i, &p) in inference.indices.iter().zip(&inference.yhat) {
        if ds.labels[i] == p {
            correct_by[p] += 1;
        } else {
            wrong_by[p] += 1;
        }
    }
    let factors: Vec<usize> = (0..c)
        .map(|p| match policy {
            UpsamplePolicy::Factor(k) => k.max(1),
            UpsamplePolicy::AutoBalance if wrong_by[p] == 0 => 1,
            UpsamplePolicy::AutoBalance => ((correct_by[p] as f64 / wrong_by[p] as f64).round() as usize).max(1),
        })
        .collect();
    let mut out = inference.indices.clone();
    for (&i, &p) in inference.indices.iter().zip(&inference.yhat) {
        if ds.labels[i] != p {
            out.extend(std::iter::repeat_n(i, factors[p] - 1));
        }
    }
    let incorrect: usize = wrong_by.iter().sum();
    let summary = JttSummary {
        correct: correct_by.iter().sum(),
        incorrect,
        factors,
        multiset_size: out.len(),
        degenerate: incorrect == 0,
    };
    Ok((out, summary))
}

/// ERM on the upsampled multiset.
pub fn train_jtt(
    ds: &LabeledDataset,
    inference: &GroupInference,
    policy: UpsamplePolicy,
    model: &ModelConfig,
    recipe: &TrainRecipe,
    seed: u64,
) -> Result<(TrainOutput, JttSummary)> {
    let (multiset, summary) = jtt_multiset(ds, inference, policy)?;
    let m = init_model(model, seed)?;
    let out = crate::train::fit_ce(m, ds, &multiset, recipe, seed)?;
    Ok((out, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdroConfig {
    pub eta_q: f64,
    /// Group adjustment `C` added as `C/√n_g` to each group's loss.
    pub c_adj: f64,
    /// Draw each epoch's samples by picking a group uniformly, then a member
    /// uniformly, with replacement. Off means plain shuffled passes.
    #[serde(default = "yes")]
    pub group_balanced: bool,
}

fn yes() -> bool {
    true
}

impl Default for GdroConfig {
    fn default() -> Self {
        Self {
            eta_q: 0.01,
            c_adj: 0.0,
            group_balanced: true,
        }
    }
}

/// Exponential-weights distribution over groups, kept as log weights so
/// that no entry underflows to zero on long runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdroState {
    pub log_q: Vec<f64>,
    pub eta_q: f64,
    pub c_adj: f64,
    /// Train-split group sizes used by the adjustment.
    pub group_sizes: Vec<usize>,
}

impl GdroState {
    pub fn new(group_sizes: Vec<usize>, cfg: &GdroConfig) -> Result<Self> {
        if group_sizes.is_empty() {
            return Err(Error::Input("group DRO needs at least one group".into()));
        }
        if !(cfg.eta_q >= 0.0 && cfg.c_adj >= 0.0 && cfg.eta_q.is_finite() && cfg.c_adj.is_finite()) {
            return Err(Error::Config("eta_q and c_adj must be finite and >= 0".into()));
        }
        let k = group_sizes.len();
        Ok(Self {
            log_q: vec![-(k as f64).ln(); k],
            eta_q: cfg.eta_q,
            c_adj: cfg.c_adj,
            group_sizes,
        })
    }

    pub fn q(&self) -> Vec<f64> {
        self.log_q.iter().map(|l| l.exp()).collect()
    }

    /// `q_g ← q_g·exp(η·(loss_g + C/√n_g))` for groups with a loss, then
    /// renormalize. Groups without a loss keep their weight before the
    /// renormalization.
    pub fn update(&mut self, group_losses: &[Option<f64>]) -> Result<()> {
        if group_losses.len() != self.log_q.len() {
            return Err(Error::Dimension("one loss slot per group required".into()));
        }
        for ((lq, l), &n) in self.log_q.iter_mut().zip(group_losses).zip(&self.group_sizes) {
            if let Some(l) = l {
                if !l.is_finite() {
                    return Err(Error::Training("non-finite group loss".into()));
                }
                let adj = if n > 0 { self.c_adj / (n as f64).sqrt() } else { 0.0 };
                *lq += self.eta_q * (l + adj);
            }
        }
        let lse = crate::nn::loss::log_sum_exp(&self.log_q);
        self.log_q.iter_mut().for_each(|l| *l -= lse);
        Ok(())
    }

    /// Largest `|Σq − 1|`, and whether every log weight is finite (so every
    /// `q_g > 0`).
    pub fn simplex_error(&self) -> (f64, bool) {
        let sum: f64 = self.q().iter().sum();
        ((sum - 1.0).abs(), self.log_q.iter().all(|l| l.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct GdroOutput {
    pub train: TrainOutput,
    pub state: GdroState,
    /// Largest `|Σq − 1|` seen after any update.
    pub max_sum_error: f64,
    /// Smallest log weight seen after any update.
    pub min_log_q: f64,
    /// False if any update left a non-finite log weight.
    pub always_positive: bool,
    pub updates: usize,
}

/// One epoch of group-balanced draws: `n` samples, each from a uniformly
/// chosen nonempty group.
pub fn balanced_order<R: rand::Rng + ?Sized>(members: &[Vec<usize>], n: usize, rng: &mut R) -> Vec<usize> {
    let groups: Vec<&Vec<usize>> = members.iter().filter(|m| !m.is_empty()).collect();
    (0..n)
        .map(|_| {
            let g = groups[rng.random_range(0..groups.len())];
            g[rng.random_range(0..g.len())]
        })
        .collect()
}

/// Minibatch group DRO with true group labels.
pub fn train_gdro(
    ds: &LabeledDataset,
    model: &ModelConfig,
    recipe: &TrainRecipe,
    cfg: &GdroConfig,
    seed: u64,
) -> Result<GdroOutput> {
    let k = ds.num_groups();
    let mut state = GdroState::new(ds.group_counts(Split::Train), cfg)?;
    let mut min_log_q = f64::INFINITY;
    let mut max_sum_error: f64 = 0.0;
    let mut always_positive = true;
    let mut updates = 0usize;
    let m = init_model(model, seed)?;
    let train_idx = ds.indices(Split::Train);
    let step = |model: &MlpModel, x: &Matrix, idx: &[usize]| -> Result<(f64, GradientStore)> {
        let cache = model.forward_cached(x)?;
        let labels = ds.labels_of(idx);
        let losses = per_sample_cross_entropy(&cache.logits, &labels)?;
        let groups: Vec<usize> = idx.iter().map(|&i| ds.group_id(i)).collect();
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&g, &l) in groups.iter().zip(&losses) {
            sum[g] += l;
            count[g] += 1;
        }
        let group_losses: Vec<Option<f64>> = (0..k).map(|g| (count[g] > 0).then(|| sum[g] / count[g] as f64)).collect();
        state.update(&group_losses)?;
        updates += 1;
        let (err, positive) = state.simplex_error();
        max_sum_error = max_sum_error.max(err);
        always_positive &= positive;
        min_log_q = state.log_q.iter().copied().fold(min_log_q, f64::min);
        let q = state.q();
        let weights: Vec<f64> = groups.iter().map(|&g| q[g] / count[g] as f64).collect();
        let (loss, d_logits) = weighted_cross_entropy(&cache.logits, &labels, Some(&weights))?;
        let grads = model.backward(x, &cache, None, Some(&d_logits))?;
        Ok((loss, grads))
    };
    let train = if cfg.group_balanced {
        let mut members = vec![Vec::new(); k];
        for &i in &train_idx {
            members[ds.group_id(i)].push(i);
        }
        let n = train_idx.len();
        fit_epochs(m, ds, recipe, seed, "batches", |r| balanced_order(&members, n, r), step)?
    } else {
        fit_minibatch(m, ds, &train_idx, recipe, seed, "batches", step)?
    };
    Ok(GdroOutput {
        train,
        state,
        max_sum_error,
        min_log_q,
        always_positive,
        updates,
    })
}

/// Stage 2 with `ŷ` replaced by the class tied to each true attribute.
pub fn train_cnc_star(ds: &LabeledDataset, cfg: &CncConfig) -> Result<CncOutput> {
    train_cnc(ds, &oracle_inference(ds, Split::Train)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage1::{InferenceKind, InferenceMethod};

    #[test]
    fn auto_balance_arithmetic() {
        let n = 1000;
        let ds = LabeledDataset::new(
            "j",
            Matrix::zeros(n, 1),
            vec![0; n],
            vec![0; n],
            vec![Split::Train; n],
            2,
            2,
        )
        .unwrap();
        // 990 predicted correctly, 10 predicted as class 0 but labeled... all
        // share prediction 0; make 10 of them class-1 errors instead.
        let mut ds = ds;
        for i in 0..10 {
            ds.labels[i] = 1;
        }
        let inf = GroupInference::new(
            &ds,
            Split::Train,
            ds.indices(Split::Train),
            vec![0; n],
            InferenceMethod::plain(InferenceKind::Argmax),
            "t",
        )
        .unwrap();
        let (ms, s) = jtt_multiset(&ds, &inf, UpsamplePolicy::AutoBalance).unwrap();
        assert_eq!(s.factors[0], 99);
        assert_eq!(ms.len(), 990 + 990);
        for i in 0..10 {
            assert_eq!(ms.iter().filter(|&&j| j == i).count(), 99);
        }
        let (ms1, _) = jtt_multiset(&ds, &inf, UpsamplePolicy::Factor(1)).unwrap();
        assert_eq!(ms1, ds.indices(Split::Train));
    }

    #[test]
    fn gdro_recurrence_matches_hand_unroll() {
        let mut s = GdroState::new(vec![10, 10], &GdroConfig { eta_q: 0.1, c_adj: 0.0, group_balanced: false }).unwrap();
        let (mut a, mut b) = (0.5f64, 0.5f64);
        for _ in 0..200 {
            s.update(&[Some(0.1), Some(3.0)]).unwrap();
            a *= (0.1f64 * 0.1).exp();
            b *= (0.1f64 * 3.0).exp();
            let z = a + b;
            a /= z;
            b /= z;
            let q = s.q();
            assert!((q[0] - a).abs() < 1e-12 && (q[1] - b).abs() < 1e-12);
            assert!(s.simplex_error().0 < 1e-12);
        }
        assert!(s.q()[1] > 0.999);
    }

    #[test]
    fn gdro_absent_group_keeps_weight_and_adjustment_applies() {
        let mut s = GdroState::new(vec![4, 100, 1], &GdroConfig { eta_q: 1.0, c_adj: 2.0, group_balanced: false }).unwrap();
        s.update(&[Some(0.0), Some(0.0), None]).unwrap();
        let (w0, w1, w2) = ((2.0f64 / 2.0).exp(), (2.0f64 / 10.0).exp(), 1.0);
        let z = w0 + w1 + w2;
        let q = s.q();
        assert!((q[0] - w0 / z).abs() < 1e-12);
        assert!((q[1] - w1 / z).abs() < 1e-12);
        assert!((q[2] - w2 / z).abs() < 1e-12);
    }

    #[test]
    fn zero_step_size_keeps_uniform() {
        let mut s = GdroState::new(vec![1; 4], &GdroConfig { eta_q: 0.0, c_adj: 0.0, group_balanced: false }).unwrap();
        s.update(&[Some(5.0), Some(0.0), None, Some(1.0)]).unwrap();
        assert!(s.q().iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }

    #[test]
    fn huge_losses_keep_weights_positive() {
        let mut s = GdroState::new(vec![1, 1], &GdroConfig { eta_q: 1.0, c_adj: 0.0, group_balanced: false }).unwrap();
        for _ in 0..10_000 {
            s.update(&[Some(0.0), Some(50.0)]).unwrap();
        }
        let (err, positive) = s.simplex_error();
        assert!(positive && err < 1e-12);
        assert!(s.log_q[0] < -1e5);
    }

    #[test]
    fn balanced_order_visits_groups_evenly() {
        let members = vec![(0..990).collect::<Vec<_>>(), vec![990], vec![]];
        let mut r = crate::rng::stream(3, "t");
        let order = balanced_order(&members, 20_000, &mut r);
        let rare = order.iter().filter(|&&i| i == 990).count() as f64 / 20_000.0;
        assert!((rare - 0.5).abs() < 0.02, "{rare}");
    }
}
