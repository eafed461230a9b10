//! Spuriously correlated datasets: colored MNIST and synthetic blobs.

pub mod blobs;
pub mod cmnist;
pub mod dataset;
pub mod idx;

pub use blobs::{build_blobs, BlobSpec};
pub use cmnist::{build_cmnist, CmnistSpec};
pub use dataset::{Group, LabeledDataset, Split};
pub use idx::{parse_idx, serialize_idx, IdxTensor};
