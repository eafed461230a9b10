//! Dense MLP engine: matrices, exact backpropagation, SGD, and the norms
//! used by the generalization-bound checker.

pub mod linalg;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod optim;

pub use linalg::{l2_normalize_backward, l2_normalize_rows, spectral_norm, NormalizedRows};
pub use loss::{cross_entropy, per_sample_cross_entropy, softmax_row, weighted_cross_entropy};
pub use matrix::Matrix;
pub use mlp::{Activation, Dense, ForwardCache, GradientStore, MlpModel, ModelConfig};
pub use optim::{sgd_step, Accumulator, SgdConfig, SgdState};
