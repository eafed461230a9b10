//! Desk-scale defaults for the blob substrate, shared by the acceptance
//! suite and the command line so both run the same experiments.

use crate::baselines::GdroConfig;
use crate::cnc::{CncConfig, SelectionMetric};
use crate::data::{BlobSpec, LabeledDataset};
use crate::losses::{LossConfig, Objective};
use crate::nn::{ModelConfig, SgdConfig};
use crate::sampler::SamplerMode;
use crate::train::TrainRecipe;

/// Two hidden layers of 32; the second is the representation.
pub fn model(ds: &LabeledDataset) -> ModelConfig {
    ModelConfig {
        input_dim: ds.feature_dim(),
        hidden: vec![32, 32],
        classes: ds.classes,
        projection: vec![],
    }
}

pub fn substrate(p_corr: f64, seed: u64) -> BlobSpec {
    BlobSpec::substrate(p_corr, seed)
}

/// Plain ERM and the recipe JTT and group DRO train with.
pub fn erm_recipe() -> TrainRecipe {
    TrainRecipe {
        epochs: 20,
        batch_size: 32,
        sgd: SgdConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-3,
        },
        select_on_val: false,
    }
}

pub fn robust_recipe() -> TrainRecipe {
    TrainRecipe {
        select_on_val: true,
        ..erm_recipe()
    }
}

/// Short, lightly trained stage-1 model whose errors mark the minority.
pub fn stage1_recipe() -> TrainRecipe {
    TrainRecipe {
        epochs: 2,
        ..TrainRecipe::stage1()
    }
}

pub fn gdro() -> GdroConfig {
    GdroConfig::default()
}

/// Group adjustments tried for group DRO; the best on validation is kept.
pub const GDRO_ADJUSTMENTS: [f64; 3] = [0.0, 1.0, 2.0];

pub fn cnc(ds: &LabeledDataset, seed: u64) -> CncConfig {
    CncConfig {
        model: model(ds),
        sampler: SamplerMode::CncTwoSided,
        m: 16,
        n: 16,
        loss: LossConfig {
            tau: 0.1,
            lambda: 0.75,
            objective: Objective::Cnc,
        },
        sgd: SgdConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-3,
        },
        epochs: 10,
        grad_accum: Some(4),
        eval_every: 1,
        selection: SelectionMetric::ValWorstGroupAcc,
        anchors_per_epoch: Some(1000),
        seed,
    }
}
