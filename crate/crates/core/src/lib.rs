//! Correct-N-Contrast: two-stage contrastive training for worst-group
//! robustness under spurious correlations, with the baselines and
//! representation diagnostics needed to study it at desk scale.

pub(crate) mod codec;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod presets;
pub mod rng;
pub mod sampler;
pub mod baselines;
pub mod checkpoint;
pub mod cnc;
pub mod stage1;
pub mod train;

pub use error::{Error, Result};
