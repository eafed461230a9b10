//! Run configuration: the preset defaults with a TOML file merged over them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cnc::baselines::{GdroConfig, UpsamplePolicy};
use cnc::cnc::{CncConfig, SelectionMetric};
use cnc::data::{build_blobs, build_cmnist, BlobSpec, CmnistSpec, LabeledDataset};
use cnc::losses::LossConfig;
use cnc::nn::{ModelConfig, SgdConfig};
use cnc::presets;
use cnc::sampler::SamplerMode;
use cnc::train::TrainRecipe;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Blobs,
    Cmnist,
}

/// Blob generator settings; `p_corr` and the seed come from elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub classes: usize,
    pub num_attributes: usize,
    pub d_core: usize,
    pub d_spur: usize,
    pub separation: f64,
    pub spur_scale: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub p_corr: f64,
    pub blobs: BlobParams,
    /// Directory holding the four MNIST idx files (optionally gzipped).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    pub cmnist_val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub hidden: Vec<usize>,
    pub projection: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CncParams {
    pub sampler: SamplerMode,
    pub m: usize,
    pub n: usize,
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Batches per optimizer step; 0 steps once per epoch.
    pub grad_accum: usize,
    pub eval_every: usize,
    /// 0 visits every eligible anchor each epoch.
    pub anchors_per_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JttParams {
    /// Copies per error-set sample; 0 balances each prediction's
    /// correct and incorrect counts.
    pub upsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdroParams {
    pub eta_q: f64,
    /// Each value is trained; the best by validation worst-group accuracy
    /// is kept.
    pub c_adjustments: Vec<f64>,
    pub group_balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelShape,
    /// Plain ERM, also the reference stage-1 recipe for `train-erm`.
    pub erm: TrainRecipe,
    /// The short model whose predictions become `ŷ`.
    pub stage1: TrainRecipe,
    /// Shared by JTT and group DRO.
    pub robust: TrainRecipe,
    pub cnc: CncParams,
    pub jtt: JttParams,
    pub gdro: GdroParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = presets::substrate(0.995, 0);
        let shape = ModelShape {
            hidden: vec![32, 32],
            projection: vec![],
        };
        let cnc = presets::cnc(&dummy_dataset(), 0);
        let gdro = presets::gdro();
        Self {
            data: DataConfig {
                source: Source::Blobs,
                p_corr: spec.p_corr,
                blobs: BlobParams {
                    classes: spec.classes,
                    num_attributes: spec.num_attributes,
                    d_core: spec.d_core,
                    d_spur: spec.d_spur,
                    separation: spec.separation,
                    spur_scale: spec.spur_scale,
                    n_train: spec.n_train,
                    n_val: spec.n_val,
                    n_test: spec.n_test,
                },
                mnist_dir: None,
                cmnist_val_fraction: CmnistSpec::new(0.995, 0).val_fraction,
            },
            model: shape,
            erm: presets::erm_recipe(),
            stage1: presets::stage1_recipe(),
            robust: presets::robust_recipe(),
            cnc: CncParams {
                sampler: cnc.sampler,
                m: cnc.m,
                n: cnc.n,
                loss: cnc.loss,
                sgd: cnc.sgd,
                epochs: cnc.epochs,
                grad_accum: cnc.grad_accum.unwrap_or(0),
                eval_every: cnc.eval_every,
                anchors_per_epoch: cnc.anchors_per_epoch.unwrap_or(0),
            },
            jtt: JttParams { upsample: 0 },
            gdro: GdroParams {
                eta_q: gdro.eta_q,
                c_adjustments: presets::GDRO_ADJUSTMENTS.to_vec(),
                group_balanced: gdro.group_balanced,
            },
        }
    }
}

/// The presets take a dataset only to read its shape.
fn dummy_dataset() -> LabeledDataset {
    build_blobs(&BlobSpec {
        n_train: 10,
        n_val: 0,
        n_test: 0,
        ..presets::substrate(0.5, 0)
    })
    .expect("preset blob spec is valid")
}

/// Recursively overlays `top` onto `base`; tables merge, anything else
/// replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults, overridden by the file at `path` if given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let top: toml::Value = toml::from_str(text)?;
        let mut base = toml::Value::try_from(Self::default())?;
        merge(&mut base, top);
        let cfg: Self = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.data.p_corr) {
            bail!("data.p_corr must lie in [0, 1]");
        }
        if self.gdro.c_adjustments.is_empty() {
            bail!("gdro.c_adjustments must list at least one value");
        }
        for r in [&self.erm, &self.stage1, &self.robust] {
            r.validate()?;
        }
        Ok(())
    }

    pub fn build_dataset(&self, seed: u64) -> Result<LabeledDataset> {
        let d = &self.data;
        match d.source {
            Source::Blobs => {
                let b = &d.blobs;
                Ok(build_blobs(&BlobSpec {
                    classes: b.classes,
                    num_attributes: b.num_attributes,
                    d_core: b.d_core,
                    d_spur: b.d_spur,
                    separation: b.separation,
                    spur_scale: b.spur_scale,
                    p_corr: d.p_corr,
                    n_train: b.n_train,
                    n_val: b.n_val,
                    n_test: b.n_test,
                    seed,
                })?)
            }
            Source::Cmnist => {
                let dir = d
                    .mnist_dir
                    .as_ref()
                    .context("data.mnist_dir (or --mnist-dir) is required for colored MNIST")?;
                let (train, test) = cnc::data::idx::load_mnist_dir(dir)?;
                let spec = CmnistSpec {
                    val_fraction: d.cmnist_val_fraction,
                    ..CmnistSpec::new(d.p_corr, seed)
                };
                Ok(build_cmnist(&train, &test, &spec)?)
            }
        }
    }

    pub fn model_config(&self, ds: &LabeledDataset) -> ModelConfig {
        ModelConfig {
            input_dim: ds.feature_dim(),
            hidden: self.model.hidden.clone(),
            classes: ds.classes,
            projection: self.model.projection.clone(),
        }
    }

    pub fn cnc_config(&self, ds: &LabeledDataset, seed: u64) -> CncConfig {
        let c = &self.cnc;
        CncConfig {
            model: self.model_config(ds),
            sampler: c.sampler,
            m: c.m,
            n: c.n,
            loss: c.loss,
            sgd: c.sgd,
            epochs: c.epochs,
            grad_accum: (c.grad_accum > 0).then_some(c.grad_accum),
            eval_every: c.eval_every,
            selection: SelectionMetric::ValWorstGroupAcc,
            anchors_per_epoch: (c.anchors_per_epoch > 0).then_some(c.anchors_per_epoch),
            seed,
        }
    }

    pub fn upsample_policy(&self) -> UpsamplePolicy {
        match self.jtt.upsample {
            0 => UpsamplePolicy::AutoBalance,
            k => UpsamplePolicy::Factor(k),
        }
    }

    pub fn gdro_configs(&self) -> Vec<GdroConfig> {
        self.gdro
            .c_adjustments
            .iter()
            .map(|&c_adj| GdroConfig {
                eta_q: self.gdro.eta_q,
                c_adj,
                group_balanced: self.gdro.group_balanced,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let c = RunConfig::from_toml("[data.blobs]\nn_train = 500\n[cnc]\nm = 4\n").unwrap();
        let d = RunConfig::default();
        assert_eq!(c.data.blobs.n_train, 500);
        assert_eq!(c.cnc.m, 4);
        assert_eq!(c.cnc.n, d.cnc.n);
        assert_eq!(c.erm, d.erm);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[cnc]\nmm = 4\n").is_err());
        assert!(RunConfig::from_toml("[data]\np_corr = 1.5\n").is_err());
    }
}
