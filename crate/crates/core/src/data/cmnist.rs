//! Colored MNIST with five digit-pair classes and a color as the spurious
//! attribute.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{correlated_attribute, fill_missing_train_groups, LabeledDataset, Split};
use super::idx::MnistSplit;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng;

/// Class `k` is the digit pair `(2k, 2k+1)`.
pub const CLASS_PAIRS: [(u8, u8); 5] = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)];

/// Colors in class order: `#ff0000, #85ff00, #00fff3, #6e00ff, #ff0018`.
pub const PALETTE: [[u8; 3]; 5] = [
    [0xff, 0x00, 0x00],
    [0x85, 0xff, 0x00],
    [0x00, 0xff, 0xf3],
    [0x6e, 0x00, 0xff],
    [0xff, 0x00, 0x18],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmnistSpec {
    pub p_corr: f64,
    #[serde(default = "default_palette")]
    pub palette: Vec<[u8; 3]>,
    pub seed: u64,
    /// Fraction of the MNIST training split held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_palette() -> Vec<[u8; 3]> {
    PALETTE.to_vec()
}

fn default_val_fraction() -> f64 {
    0.2
}

impl CmnistSpec {
    pub fn new(p_corr: f64, seed: u64) -> Self {
        Self {
            p_corr,
            palette: default_palette(),
            seed,
            val_fraction: default_val_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_corr) {
            return Err(Error::Config("p_corr must lie in [0, 1]".into()));
        }
        if self.palette.len() != CLASS_PAIRS.len() {
            return Err(Error::Config("palette must hold one color per class".into()));
        }
        for i in 0..self.palette.len() {
            for j in i + 1..self.palette.len() {
                if self.palette[i] == self.palette[j] {
                    return Err(Error::Config("palette colors must be distinct".into()));
                }
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn digit_class(digit: u8) -> Option<usize> {
    (digit <= 9).then_some(digit as usize / 2)
}

/// Writes a grayscale image tinted with `color` as `rows·cols·3` values in
/// `[0, 1]`, channel-last.
fn colorize(image: &[u8], color: [u8; 3], out: &mut [f64]) {
    let tint = color.map(|c| f64::from(c) / 255.0);
    for (px, &g) in image.iter().enumerate() {
        let v = f64::from(g) / 255.0;
        for k in 0..3 {
            out[px * 3 + k] = v * tint[k];
        }
    }
}

pub fn build_cmnist(train: &MnistSplit, test: &MnistSplit, spec: &CmnistSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let classes = CLASS_PAIRS.len();
    let num_attributes = spec.palette.len();
    if train.rows != test.rows || train.cols != test.cols {
        return Err(Error::Data("train and test images differ in size".into()));
    }

    let to_class = |d: u8| digit_class(d).ok_or_else(|| Error::Data(format!("label {d} is not a digit")));
    let train_y: Vec<usize> = train.labels.iter().map(|&d| to_class(d)).collect::<Result<_>>()?;
    let test_y: Vec<usize> = test.labels.iter().map(|&d| to_class(d)).collect::<Result<_>>()?;
    for y in 0..classes {
        if !train_y.contains(&y) || !test_y.contains(&y) {
            let (a, b) = CLASS_PAIRS[y];
            return Err(Error::Data(format!("no samples of digits {a}/{b}")));
        }
    }

    // Stratified 80/20 train/val split of the MNIST training images.
    let mut split_rng = rng::stream(spec.seed, "cmnist-split");
    let mut train_split = vec![Split::Train; train.len()];
    for y in 0..classes {
        let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train_y[i] == y).collect();
        idx.shuffle(&mut split_rng);
        let n_val = (idx.len() as f64 * spec.val_fraction).round() as usize;
        for &i in &idx[..n_val] {
            train_split[i] = Split::Val;
        }
    }

    let mut color_rng = rng::stream(spec.seed, "cmnist-color");
    let mut attrs: Vec<usize> = Vec::with_capacity(train.len() + test.len());
    for i in 0..train.len() {
        let a = match train_split[i] {
            Split::Train => correlated_attribute(train_y[i], spec.p_corr, num_attributes, &mut color_rng),
            _ => color_rng.random_range(0..num_attributes),
        };
        attrs.push(a);
    }
    for _ in 0..test.len() {
        attrs.push(color_rng.random_range(0..num_attributes));
    }

    let mut labels = train_y;
    labels.extend(test_y);
    let mut splits = train_split;
    splits.extend(std::iter::repeat_n(Split::Test, test.len()));

    if spec.p_corr < 1.0 {
        let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| splits[i] == Split::Train).collect();
        fill_missing_train_groups(&labels, &mut attrs, &train_idx, classes, num_attributes, &mut color_rng);
    }

    let dim = train.rows * train.cols * 3;
    let n = labels.len();
    let mut feats = vec![0.0; n * dim];
    for i in 0..n {
        let img = if i < train.len() {
            train.image(i)
        } else {
            test.image(i - train.len())
        };
        colorize(img, spec.palette[attrs[i]], &mut feats[i * dim..(i + 1) * dim]);
    }

    LabeledDataset::new(
        format!("cmnist-p{}", spec.p_corr),
        Matrix::from_vec(n, dim, feats)?,
        labels,
        attrs,
        splits,
        classes,
        num_attributes,
    )
}
