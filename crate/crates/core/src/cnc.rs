//! Stage 2: contrastive batches from stage-1 pseudo labels, the joint
//! contrastive + cross-entropy objective, gradient accumulation, per-epoch
//! validation selection and resumable checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_header, read_model, read_rng, write_model, write_rng};
use crate::codec::{Reader, Writer};
use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{joint_loss, BatchLayout, LossConfig};
use crate::metrics::{evaluate_split, group_accuracy, BoundConfig, EvalOptions, MetricsReport, MiConfig};
use crate::nn::{Accumulator, MlpModel, ModelConfig, SgdConfig, SgdState};
use crate::rng::{self, Rng, RngState};
use crate::sampler::{IndexPools, SamplerMode};
use crate::stage1::{init_model, GroupInference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValWorstGroupAcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CncConfig {
    pub model: ModelConfig,
    pub sampler: SamplerMode,
    pub m: usize,
    pub n: usize,
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Batches summed per optimizer step; `None` steps once per epoch.
    pub grad_accum: Option<usize>,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub selection: SelectionMetric,
    /// Visit only this many shuffled anchors per epoch.
    #[serde(default)]
    pub anchors_per_epoch: Option<usize>,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl CncConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.sgd.validate()?;
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("M and N must be >= 1".into()));
        }
        if self.grad_accum == Some(0) || self.eval_every == 0 || self.anchors_per_epoch == Some(0) {
            return Err(Error::Config("grad_accum, eval_every and anchors_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    /// Digest of everything that must match to resume a run; the epoch
    /// budget may change.
    pub fn resume_digest(&self) -> u64 {
        let mut c = self.clone();
        c.epochs = 0;
        fnv(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn inference_digest(inf: &GroupInference) -> u64 {
    let mut bytes = Vec::with_capacity(inf.len() * 16);
    for (&i, &p) in inf.indices.iter().zip(&inf.yhat) {
        bytes.extend_from_slice(&(i as u64).to_le_bytes());
        bytes.extend_from_slice(&(p as u64).to_le_bytes());
    }
    fnv(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CncEpoch {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub contrastive: f64,
    pub cross_entropy: f64,
    /// Optimizer steps taken in this epoch.
    pub steps: usize,
    pub val_worst_group_acc: Option<f64>,
    pub val_avg_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CncOutput {
    pub model: MlpModel,
    pub history: Vec<CncEpoch>,
    /// 0 when no evaluation happened and the final model is returned.
    pub best_epoch: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Best {
    score: f64,
    epoch: usize,
    model: MlpModel,
}

/// Everything needed to continue a run bit-for-bit from an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: u64,
    pub inference_digest: u64,
    pub epoch: usize,
    pub steps: usize,
    pub model: MlpModel,
    pub sgd: SgdState,
    pub rng: RngState,
    pub best: Option<(f64, usize, MlpModel)>,
    pub history: Vec<CncEpoch>,
}

const CKPT_MAGIC: &[u8; 8] = b"CNCCKPT\0";
const CKPT_VERSION: u32 = 1;

fn opt_f64(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn f64_opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CKPT_MAGIC);
        w.u32(CKPT_VERSION);
        w.u64(self.config_digest);
        w.u64(self.inference_digest);
        w.u64(self.epoch as u64);
        w.u64(self.steps as u64);
        write_model(&mut w, &self.model);
        w.u32(self.sgd.velocity.len() as u32);
        for v in &self.sgd.velocity {
            w.f64s(v);
        }
        write_rng(&mut w, &self.rng);
        match &self.best {
            None => w.u8(0),
            Some((score, epoch, model)) => {
                w.u8(1);
                w.f64(*score);
                w.u64(*epoch as u64);
                write_model(&mut w, model);
            }
        }
        w.u64(self.history.len() as u64);
        for h in &self.history {
            w.u64(h.epoch as u64);
            w.f64(h.train_loss);
            w.f64(h.contrastive);
            w.f64(h.cross_entropy);
            w.u64(h.steps as u64);
            w.f64(opt_f64(h.val_worst_group_acc));
            w.f64(opt_f64(h.val_avg_acc));
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_header(&mut r, CKPT_MAGIC, CKPT_VERSION, "checkpoint")?;
        let config_digest = r.u64()?;
        let inference_digest = r.u64()?;
        let epoch = r.u64()? as usize;
        let steps = r.u64()? as usize;
        let model = read_model(&mut r)?;
        let nv = r.u32()? as usize;
        let velocity = (0..nv).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        let rng = read_rng(&mut r)?;
        let best = match r.u8()? {
            0 => None,
            1 => Some((r.f64()?, r.u64()? as usize, read_model(&mut r)?)),
            v => return Err(Error::Format(format!("bad best-model flag {v}"))),
        };
        let nh = r.u64()? as usize;
        let mut history = Vec::with_capacity(nh.min(1 << 16));
        for _ in 0..nh {
            history.push(CncEpoch {
                epoch: r.u64()? as usize,
                train_loss: r.f64()?,
                contrastive: r.f64()?,
                cross_entropy: r.f64()?,
                steps: r.u64()? as usize,
                val_worst_group_acc: f64_opt(r.f64()?),
                val_avg_acc: f64_opt(r.f64()?),
            });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Self {
            config_digest,
            inference_digest,
            epoch,
            steps,
            model,
            sgd: SgdState { velocity },
            rng,
            best,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Epoch-at-a-time stage-2 training.
pub struct CncTrainer<'a> {
    ds: &'a LabeledDataset,
    cfg: CncConfig,
    inference_digest: u64,
    pools: IndexPools,
    /// Dataset index of each pool position.
    positions: Vec<usize>,
    model: MlpModel,
    sgd: SgdState,
    rng: Rng,
    epoch: usize,
    steps: usize,
    best: Option<Best>,
    history: Vec<CncEpoch>,
}

impl<'a> CncTrainer<'a> {
    pub fn new(ds: &'a LabeledDataset, inference: &GroupInference, cfg: &CncConfig) -> Result<Self> {
        cfg.validate()?;
        let model = init_model(&cfg.model, cfg.seed)?;
        Self::assemble(ds, inference, cfg, model, None)
    }

    pub fn resume(ds: &'a LabeledDataset, inference: &GroupInference, cfg: &CncConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.config_digest != cfg.resume_digest() {
            return Err(Error::Config("checkpoint was written under a different configuration".into()));
        }
        if ckpt.inference_digest != inference_digest(inference) {
            return Err(Error::Config("checkpoint was written with different stage-1 labels".into()));
        }
        let model = ckpt.model.clone();
        Self::assemble(ds, inference, cfg, model, Some(ckpt))
    }

    fn assemble(
        ds: &'a LabeledDataset,
        inference: &GroupInference,
        cfg: &CncConfig,
        model: MlpModel,
        ckpt: Option<Checkpoint>,
    ) -> Result<Self> {
        if inference.split != Split::Train || inference.indices != ds.indices(Split::Train) {
            return Err(Error::Input("stage-1 inference must cover the train split in order".into()));
        }
        if model.input_dim() != ds.feature_dim() || model.classes() != ds.classes {
            return Err(Error::Config(format!(
                "model maps {} features to {} classes; dataset has {} and {}",
                model.input_dim(),
                model.classes(),
                ds.feature_dim(),
                ds.classes
            )));
        }
        let positions = inference.indices.clone();
        let pools = IndexPools::new(&ds.labels_of(&positions), &inference.yhat, ds.classes)?;
        if pools.eligible_anchors(cfg.sampler).is_empty() {
            return Err(Error::SamplerExhausted("anchors (no correctly predicted samples)".into()));
        }
        let mut t = Self {
            ds,
            cfg: cfg.clone(),
            inference_digest: inference_digest(inference),
            pools,
            positions,
            sgd: SgdState::new(&model),
            model,
            rng: rng::stream(cfg.seed, "sampler"),
            epoch: 0,
            steps: 0,
            best: None,
            history: Vec::new(),
        };
        if let Some(c) = ckpt {
            if c.sgd.velocity.len() != t.sgd.velocity.len() {
                return Err(Error::Format("checkpoint optimizer state does not match the model".into()));
            }
            t.sgd = c.sgd;
            t.rng = c.rng.restore();
            t.epoch = c.epoch;
            t.steps = c.steps;
            t.best = c.best.map(|(score, epoch, model)| Best { score, epoch, model });
            t.history = c.history;
        }
        Ok(t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn history(&self) -> &[CncEpoch] {
        &self.history
    }

    pub fn run_epoch(&mut self) -> Result<&CncEpoch> {
        let epoch = self.epoch + 1;
        let cfg = &self.cfg;
        let layout = BatchLayout {
            m: cfg.m,
            n: cfg.n,
            two_sided: cfg.sampler.two_sided(),
        };
        let mut acc = Accumulator::new(&self.model, cfg.grad_accum);
        let (mut loss_sum, mut con_sum, mut ce_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        let schedule = self.pools.epoch_schedule(cfg.m, cfg.n, cfg.sampler, &mut self.rng);
        let limit = cfg.anchors_per_epoch.unwrap_or(usize::MAX);
        for batch in schedule.take(limit) {
            let batch = batch?;
            let idx: Vec<usize> = batch.rows().map(|p| self.positions[p]).collect();
            let x = self.ds.gather(&idx);
            let out = joint_loss(&self.model, &x, &self.ds.labels_of(&idx), layout, &cfg.loss)?;
            if !out.loss.is_finite() || !out.grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {}",
                    batches + 1
                )));
            }
            acc.grads.add_assign(&out.grads)?;
            acc.commit(&mut self.model, &cfg.sgd, &mut self.sgd)?;
            loss_sum += out.loss;
            con_sum += out.representation_term;
            ce_sum += out.cross_entropy;
            batches += 1;
        }
        acc.flush(&mut self.model, &cfg.sgd, &mut self.sgd)?;
        if !self.model.is_finite() {
            return Err(Error::Training(format!("parameters became non-finite in epoch {epoch}")));
        }
        self.steps += acc.steps_taken;
        let denom = batches.max(1) as f64;
        let mut record = CncEpoch {
            epoch,
            train_loss: loss_sum / denom,
            contrastive: con_sum / denom,
            cross_entropy: ce_sum / denom,
            steps: acc.steps_taken,
            val_worst_group_acc: None,
            val_avg_acc: None,
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let val = group_accuracy(&self.model, self.ds, Split::Val)?;
            record.val_worst_group_acc = Some(val.worst_group_acc);
            record.val_avg_acc = Some(val.avg_acc);
            // Strict improvement keeps the earliest epoch on ties.
            if self.best.as_ref().is_none_or(|b| val.worst_group_acc > b.score) {
                self.best = Some(Best {
                    score: val.worst_group_acc,
                    epoch,
                    model: self.model.clone(),
                });
            }
        }
        self.epoch = epoch;
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_digest: self.cfg.resume_digest(),
            inference_digest: self.inference_digest,
            epoch: self.epoch,
            steps: self.steps,
            model: self.model.clone(),
            sgd: self.sgd.clone(),
            rng: RngState::capture(&self.rng),
            best: self.best.as_ref().map(|b| (b.score, b.epoch, b.model.clone())),
            history: self.history.clone(),
        }
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn finish(self) -> CncOutput {
        let (model, best_epoch) = match self.best {
            Some(b) => (b.model, b.epoch),
            None => (self.model, 0),
        };
        CncOutput {
            model,
            history: self.history,
            best_epoch,
            steps: self.steps,
        }
    }
}

pub fn train_cnc(ds: &LabeledDataset, inference: &GroupInference, cfg: &CncConfig) -> Result<CncOutput> {
    let mut t = CncTrainer::new(ds, inference, cfg)?;
    t.run_to_end()?;
    Ok(t.finish())
}

/// Accuracy, per-class alignment, and optionally MI and the bound check.
pub fn evaluate(model: &MlpModel, ds: &LabeledDataset, split: Split, with_bound: bool, with_mi: bool) -> Result<MetricsReport> {
    let opts = EvalOptions {
        alignment: true,
        normalized_alignment: false,
        mi: with_mi.then(MiConfig::default),
        bound: with_bound.then(BoundConfig::default),
    };
    evaluate_split(model, ds, split, &opts)
}
