//! Download-free Gaussian blobs with the same group structure as colored
//! MNIST: a class-dependent "core" block and an attribute-dependent
//! "spurious" block, concatenated, plus unit Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{correlated_attribute, fill_missing_train_groups, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub num_attributes: usize,
    pub d_core: usize,
    pub d_spur: usize,
    /// Radius of the sphere the class means are drawn from.
    pub separation: f64,
    /// Attribute means use radius `separation · spur_scale`.
    #[serde(default = "one")]
    pub spur_scale: f64,
    pub p_corr: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl BlobSpec {
    /// The substrate the acceptance suite runs on: five classes, five
    /// attributes, a weak core signal and a strong spurious one.
    pub fn substrate(p_corr: f64, seed: u64) -> Self {
        Self {
            classes: 5,
            num_attributes: 5,
            d_core: 10,
            d_spur: 10,
            separation: 3.0,
            spur_scale: 4.0,
            p_corr,
            n_train: 30000,
            n_val: 2500,
            n_test: 5000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0
            || self.num_attributes == 0
            || self.d_core == 0
            || self.d_spur == 0
            || self.n_train == 0
        {
            return Err(Error::Config("blob counts and dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_corr) {
            return Err(Error::Config("p_corr must lie in [0, 1]".into()));
        }
        if !(self.separation >= 0.0 && self.spur_scale >= 0.0) {
            return Err(Error::Config("separation and spur_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// `k` points on the sphere of radius `r` in `d` dimensions. When `d ≥ k`
/// the directions are orthogonalized so every pair sits at distance `r·√2`.
pub fn sphere_means<R: Rng + ?Sized>(k: usize, d: usize, r: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if d >= k {
            for u in &dirs {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        dirs.push(v);
    }
    dirs.into_iter()
        .map(|v| v.into_iter().map(|x| x * r).collect())
        .collect()
}

pub fn build_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut mean_rng = rng::stream(spec.seed, "blobs-means");
    let core = sphere_means(spec.classes, spec.d_core, spec.separation, &mut mean_rng);
    let spur = sphere_means(
        spec.num_attributes,
        spec.d_spur,
        spec.separation * spec.spur_scale,
        &mut mean_rng,
    );

    let n = spec.n_train + spec.n_val + spec.n_test;
    let mut label_rng = rng::stream(spec.seed, "blobs-labels");
    let mut labels = Vec::with_capacity(n);
    let mut attrs = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (split, count) in [
        (Split::Train, spec.n_train),
        (Split::Val, spec.n_val),
        (Split::Test, spec.n_test),
    ] {
        for i in 0..count {
            // Balanced classes: round-robin, then a random attribute.
            let y = i % spec.classes;
            let a = match split {
                Split::Train => correlated_attribute(y, spec.p_corr, spec.num_attributes, &mut label_rng),
                _ => label_rng.random_range(0..spec.num_attributes),
            };
            labels.push(y);
            attrs.push(a);
            splits.push(split);
        }
    }
    if spec.p_corr < 1.0 {
        let train_idx: Vec<usize> = (0..spec.n_train).collect();
        fill_missing_train_groups(
            &labels,
            &mut attrs,
            &train_idx,
            spec.classes,
            spec.num_attributes,
            &mut label_rng,
        );
    }

    let dim = spec.d_core + spec.d_spur;
    let mut noise_rng = rng::stream(spec.seed, "blobs-noise");
    let mut feats = Vec::with_capacity(n * dim);
    for i in 0..n {
        for v in core[labels[i]].iter().chain(&spur[attrs[i]]) {
            let eps: f64 = noise_rng.sample(StandardNormal);
            feats.push(v + eps);
        }
    }
    LabeledDataset::new(
        format!("blobs-p{}", spec.p_corr),
        Matrix::from_vec(n, dim, feats)?,
        labels,
        attrs,
        splits,
        spec.classes,
        spec.num_attributes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::euclidean;

    fn small(p_corr: f64, seed: u64) -> BlobSpec {
        BlobSpec {
            n_train: 1000,
            n_val: 200,
            n_test: 500,
            ..BlobSpec::substrate(p_corr, seed)
        }
    }

    #[test]
    fn every_group_nonempty_and_counts_sum() {
        let ds = build_blobs(&small(0.995, 1)).unwrap();
        let counts = ds.group_counts(Split::Train);
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert!(counts.iter().all(|&c| c > 0));
        for (i, &s) in ds.splits.iter().enumerate() {
            if s == Split::Train {
                assert_eq!(ds.group_id(i), ds.labels[i] * 5 + ds.attributes[i]);
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            build_blobs(&small(0.9, 4)).unwrap().to_bytes(),
            build_blobs(&small(0.9, 4)).unwrap().to_bytes()
        );
        assert_ne!(
            build_blobs(&small(0.9, 4)).unwrap().to_bytes(),
            build_blobs(&small(0.9, 5)).unwrap().to_bytes()
        );
    }

    #[test]
    fn orthogonal_means_are_equidistant() {
        let mut r = rng::stream(0, "t");
        let m = sphere_means(5, 10, 2.0, &mut r);
        for i in 0..5 {
            let norm = m[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-12);
            for j in i + 1..5 {
                assert!((euclidean(&m[i], &m[j]) - 2.0 * 2f64.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_correlation_nearest_centroid_on_spurious_block() {
        let spec = BlobSpec {
            separation: 20.0,
            ..small(1.0, 2)
        };
        let ds = build_blobs(&spec).unwrap();
        let train = ds.indices(Split::Train);
        // Nearest-centroid oracle fit on the spurious block only.
        let mut centroids = vec![vec![0.0; spec.d_spur]; spec.classes];
        let mut counts = vec![0usize; spec.classes];
        for &i in &train {
            let y = ds.labels[i];
            counts[y] += 1;
            for (c, v) in centroids[y].iter_mut().zip(&ds.features.row(i)[spec.d_core..]) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let correct = train
            .iter()
            .filter(|&&i| {
                let x = &ds.features.row(i)[spec.d_core..];
                let pred = (0..spec.classes)
                    .min_by(|&a, &b| euclidean(x, &centroids[a]).total_cmp(&euclidean(x, &centroids[b])))
                    .unwrap();
                pred == ds.labels[i]
            })
            .count();
        assert_eq!(correct, train.len());
    }

    #[test]
    fn eval_attributes_are_uniform() {
        let ds = build_blobs(&BlobSpec {
            n_test: 5000,
            ..small(0.995, 3)
        })
        .unwrap();
        let mut counts = [0usize; 5];
        for i in ds.indices(Split::Test) {
            counts[ds.attributes[i]] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 18.47, "chi2 {chi2}");
    }

    #[test]
    fn zero_separation_is_pure_noise() {
        let ds = build_blobs(&BlobSpec {
            separation: 0.0,
            ..small(0.995, 3)
        })
        .unwrap();
        let (mean, std) = ds.features.column_stats();
        assert!(mean.iter().all(|m| m.abs() < 0.15));
        assert!(std.iter().all(|s| (s - 1.0).abs() < 0.1));
    }
}
