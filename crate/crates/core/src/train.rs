//! Shuffled-minibatch SGD over an index multiset, shared by ERM, JTT and
//! group DRO. The per-batch objective is supplied by the caller.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::group_accuracy;
use crate::nn::{cross_entropy, sgd_step, GradientStore, Matrix, MlpModel, SgdConfig, SgdState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Keep the epoch with the best validation worst-group accuracy
    /// instead of the last one.
    #[serde(default)]
    pub select_on_val: bool,
}

impl TrainRecipe {
    /// Few epochs with weight decay: the regularized stage-1 recipe.
    pub fn stage1() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            sgd: SgdConfig {
                learning_rate: 1e-3,
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            select_on_val: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_worst_group_acc: Option<f64>,
    pub val_avg_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned model; 0 means the initialization.
    pub best_epoch: usize,
}

impl TrainOutput {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }
}

/// Mean cross-entropy over the batch.
pub fn ce_step(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<(f64, GradientStore)> {
    let cache = model.forward_cached(x)?;
    let (loss, d_logits) = cross_entropy(&cache.logits, labels)?;
    let grads = model.backward(x, &cache, None, Some(&d_logits))?;
    Ok((loss, grads))
}

/// Runs `recipe.epochs` passes over `indices` (repeats allowed), shuffled
/// each epoch by the `stream` rng of `seed`. `step` returns the batch loss
/// and gradients for `(model, features, dataset indices)`.
pub fn fit_minibatch<F>(
    model: MlpModel,
    ds: &LabeledDataset,
    indices: &[usize],
    recipe: &TrainRecipe,
    seed: u64,
    stream: &str,
    step: F,
) -> Result<TrainOutput>
where
    F: FnMut(&MlpModel, &Matrix, &[usize]) -> Result<(f64, GradientStore)>,
{
    if indices.is_empty() {
        return Err(Error::Input("training index set is empty".into()));
    }
    let mut order = indices.to_vec();
    fit_epochs(
        model,
        ds,
        recipe,
        seed,
        stream,
        |r| {
            order.shuffle(r);
            order.clone()
        },
        step,
    )
}

/// Like [`fit_minibatch`] but `make_order` draws each epoch's visiting
/// order (possibly with repeats) from the stream rng.
pub fn fit_epochs<O, F>(
    mut model: MlpModel,
    ds: &LabeledDataset,
    recipe: &TrainRecipe,
    seed: u64,
    stream: &str,
    mut make_order: O,
    mut step: F,
) -> Result<TrainOutput>
where
    O: FnMut(&mut rng::Rng) -> Vec<usize>,
    F: FnMut(&MlpModel, &Matrix, &[usize]) -> Result<(f64, GradientStore)>,
{
    recipe.validate()?;
    let mut order_rng = rng::stream(seed, stream);
    let mut state = SgdState::new(&model);
    let mut history = Vec::with_capacity(recipe.epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    for epoch in 1..=recipe.epochs {
        let order = make_order(&mut order_rng);
        if order.is_empty() {
            return Err(Error::Input("training index set is empty".into()));
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(recipe.batch_size) {
            let x = ds.gather(chunk);
            let (loss, grads) = step(&model, &x, chunk)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            sgd_step(&mut model, &grads, &recipe.sgd, &mut state)?;
            total += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::Training(format!("parameters became non-finite in epoch {epoch}")));
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_worst_group_acc: None,
            val_avg_acc: None,
        };
        if recipe.select_on_val {
            let val = group_accuracy(&model, ds, Split::Val)?;
            record.val_worst_group_acc = Some(val.worst_group_acc);
            record.val_avg_acc = Some(val.avg_acc);
            if best.as_ref().is_none_or(|(w, _, _)| val.worst_group_acc > *w) {
                best = Some((val.worst_group_acc, epoch, model.clone()));
            }
        }
        history.push(record);
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, recipe.epochs),
    };
    Ok(TrainOutput {
        model,
        history,
        best_epoch,
    })
}

/// Plain cross-entropy training on `indices`.
pub fn fit_ce(
    model: MlpModel,
    ds: &LabeledDataset,
    indices: &[usize],
    recipe: &TrainRecipe,
    seed: u64,
) -> Result<TrainOutput> {
    fit_minibatch(model, ds, indices, recipe, seed, "batches", |m, x, idx| {
        ce_step(m, x, &ds.labels_of(idx))
    })
}
