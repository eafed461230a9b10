use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{dim_err, Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split '{s}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (class, attribute) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Group {
    pub y: usize,
    pub a: usize,
}

/// Features with class labels, spurious attributes and split tags.
/// Group id of a sample is `y·|A| + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub attributes: Vec<usize>,
    pub splits: Vec<Split>,
    pub classes: usize,
    pub num_attributes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        attributes: Vec<usize>,
        splits: Vec<Split>,
        classes: usize,
        num_attributes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || attributes.len() != n || splits.len() != n {
            return dim_err(format!(
                "per-sample arrays disagree: {n} rows, {} labels, {} attributes, {} split tags",
                labels.len(),
                attributes.len(),
                splits.len()
            ));
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::Input("label out of range".into()));
        }
        if attributes.iter().any(|&a| a >= num_attributes) {
            return Err(Error::Input("attribute out of range".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            attributes,
            splits,
            classes,
            num_attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.classes * self.num_attributes
    }

    #[inline]
    pub fn group_id(&self, i: usize) -> usize {
        self.labels[i] * self.num_attributes + self.attributes[i]
    }

    pub fn group_of_id(&self, g: usize) -> Group {
        Group {
            y: g / self.num_attributes,
            a: g % self.num_attributes,
        }
    }

    pub fn id_of_group(&self, g: Group) -> usize {
        g.y * self.num_attributes + g.a
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn gather(&self, idx: &[usize]) -> Matrix {
        self.features.select_rows(idx)
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn attributes_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.attributes[i]).collect()
    }

    /// `n_g` for every group id over one split.
    pub fn group_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups()];
        for i in 0..self.len() {
            if self.splits[i] == split {
                counts[self.group_id(i)] += 1;
            }
        }
        counts
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    const MAGIC: &'static [u8; 8] = b"CNCDATA\0";
    const VERSION: u32 = 1;

    /// Serializes to the versioned binary cache format (see README).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(Self::MAGIC);
        w.u32(Self::VERSION);
        w.str(&self.name);
        w.u64(self.len() as u64);
        w.u64(self.feature_dim() as u64);
        w.u32(self.classes as u32);
        w.u32(self.num_attributes as u32);
        for &v in self.features.data() {
            w.f64(v);
        }
        for &y in &self.labels {
            w.u32(y as u32);
        }
        for &a in &self.attributes {
            w.u32(a as u32);
        }
        for &s in &self.splits {
            w.u8(s.code());
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != Self::MAGIC {
            return Err(Error::Format("not a dataset cache file".into()));
        }
        let version = r.u32()?;
        if version != Self::VERSION {
            return Err(Error::Schema(format!("dataset cache version {version} unsupported")));
        }
        let name = r.str()?;
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let classes = r.u32()? as usize;
        let num_attributes = r.u32()? as usize;
        let mut feats = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            feats.push(r.f64()?);
        }
        let labels = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let attrs = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let splits = (0..n)
            .map(|_| r.u8().and_then(Split::from_code))
            .collect::<Result<_>>()?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after dataset payload".into()));
        }
        Self::new(
            name,
            Matrix::from_vec(n, dim, feats)?,
            labels,
            attrs,
            splits,
            classes,
            num_attributes,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Training-split attribute rule shared by the generators: with probability
/// `p_corr` a sample of class `y` takes its associated attribute `y mod |A|`,
/// otherwise a uniformly random one. The realized value is what gets stored.
pub(crate) fn correlated_attribute<R: Rng + ?Sized>(
    y: usize,
    p_corr: f64,
    num_attributes: usize,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < p_corr {
        y % num_attributes
    } else {
        rng.random_range(0..num_attributes)
    }
}

/// Ensures every (y, a) group has a training sample by relabeling the
/// attribute of a random majority-group sample of the same class. Only
/// meaningful when `p_corr < 1`; callers skip it otherwise.
pub(crate) fn fill_missing_train_groups<R: Rng + ?Sized>(
    labels: &[usize],
    attributes: &mut [usize],
    train_idx: &[usize],
    classes: usize,
    num_attributes: usize,
    rng: &mut R,
) {
    for y in 0..classes {
        let majority = y % num_attributes;
        for a in 0..num_attributes {
            let present = train_idx
                .iter()
                .any(|&i| labels[i] == y && attributes[i] == a);
            if present {
                continue;
            }
            let donors: Vec<usize> = train_idx
                .iter()
                .copied()
                .filter(|&i| labels[i] == y && attributes[i] == majority)
                .collect();
            // A class with a single majority sample cannot donate without
            // emptying its own majority group.
            if donors.len() > 1 {
                let pick = donors[rng.random_range(0..donors.len())];
                attributes[pick] = a;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        LabeledDataset::new(
            "toy",
            Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap(),
            vec![0, 1, 1],
            vec![1, 0, 1],
            vec![Split::Train, Split::Train, Split::Test],
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn group_ids_and_counts() {
        let ds = toy();
        assert_eq!(ds.group_id(0), 1);
        assert_eq!(ds.group_id(2), 3);
        assert_eq!(ds.group_counts(Split::Train), vec![0, 1, 1, 0]);
        assert_eq!(ds.group_of_id(3), Group { y: 1, a: 1 });
        let total: usize = ds.group_counts(Split::Train).iter().sum();
        assert_eq!(total, ds.split_len(Split::Train));
    }

    #[test]
    fn single_sample_dataset_has_one_group_of_size_one() {
        let ds = LabeledDataset::new(
            "one",
            Matrix::zeros(1, 3),
            vec![2],
            vec![1],
            vec![Split::Train],
            3,
            2,
        )
        .unwrap();
        let counts = ds.group_counts(Split::Train);
        assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(counts[2 * 2 + 1], 1);
    }

    #[test]
    fn rejects_inconsistent_lengths() {
        let r = LabeledDataset::new(
            "bad",
            Matrix::zeros(2, 1),
            vec![0],
            vec![0, 0],
            vec![Split::Train; 2],
            1,
            1,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let ds = toy();
        let bytes = ds.to_bytes();
        assert_eq!(LabeledDataset::from_bytes(&bytes).unwrap(), ds);
        assert!(LabeledDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            LabeledDataset::from_bytes(&bad),
            Err(Error::Format(_))
        ));
    }
}
