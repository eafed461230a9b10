//! Stage 1: a regularized ERM model and the pseudo group labels `ŷ`
//! extracted from it.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{predictions, EVAL_BLOCK};
use crate::nn::matrix::dot;
use crate::nn::{Matrix, MlpModel, ModelConfig};
use crate::rng;
use crate::train::{fit_ce, TrainOutput, TrainRecipe};

/// Largest class count for which cluster→class matching enumerates all
/// permutations.
pub const MAX_CLUSTER_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    Argmax,
    Cluster,
    Oracle,
}

impl InferenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Argmax => "argmax",
            Self::Cluster => "cluster",
            Self::Oracle => "oracle",
        }
    }
}

/// How `ŷ` was produced, including any injected label noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceMethod {
    pub kind: InferenceKind,
    pub noise_p: Option<f64>,
}

impl InferenceMethod {
    pub fn plain(kind: InferenceKind) -> Self {
        Self { kind, noise_p: None }
    }
}

impl fmt::Display for InferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.noise_p {
            None => f.write_str(self.kind.as_str()),
            Some(p) => write!(f, "{}_noised({p})", self.kind.as_str()),
        }
    }
}

impl FromStr for InferenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind_of = |k: &str| match k {
            "argmax" => Ok(InferenceKind::Argmax),
            "cluster" => Ok(InferenceKind::Cluster),
            "oracle" => Ok(InferenceKind::Oracle),
            other => Err(Error::Input(format!("unknown inference method '{other}'"))),
        };
        match s.split_once("_noised(") {
            None => Ok(Self::plain(kind_of(s)?)),
            Some((k, rest)) => {
                let p = rest
                    .strip_suffix(')')
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Input(format!("malformed method tag '{s}'")))?;
                Ok(Self {
                    kind: kind_of(k)?,
                    noise_p: Some(p),
                })
            }
        }
    }
}

/// Pseudo labels for the samples `indices` of a dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInference {
    pub split: Split,
    /// Dataset indices, aligned with `yhat`.
    pub indices: Vec<usize>,
    pub yhat: Vec<usize>,
    pub method: InferenceMethod,
    pub source_model: String,
    pub accuracy_vs_y: f64,
    /// Agreement of `ŷ` with the class tied to each sample's attribute.
    pub accuracy_vs_a_proxy: Option<f64>,
}

/// The class whose majority attribute is `a`, if any.
pub fn associated_class(a: usize, classes: usize) -> Option<usize> {
    (a < classes).then_some(a)
}

impl GroupInference {
    pub fn new(
        ds: &LabeledDataset,
        split: Split,
        indices: Vec<usize>,
        yhat: Vec<usize>,
        method: InferenceMethod,
        source_model: impl Into<String>,
    ) -> Result<Self> {
        if indices.len() != yhat.len() {
            return Err(Error::Dimension(format!(
                "{} indices but {} predictions",
                indices.len(),
                yhat.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::Input(format!("split '{split}' is empty")));
        }
        if yhat.iter().any(|&c| c >= ds.classes) {
            return Err(Error::Input("prediction out of class range".into()));
        }
        let n = indices.len() as f64;
        let hits = indices.iter().zip(&yhat).filter(|(&i, &p)| ds.labels[i] == p).count();
        let proxy: Vec<bool> = indices
            .iter()
            .zip(&yhat)
            .filter_map(|(&i, &p)| associated_class(ds.attributes[i], ds.classes).map(|c| c == p))
            .collect();
        let accuracy_vs_a_proxy =
            (!proxy.is_empty()).then(|| proxy.iter().filter(|&&b| b).count() as f64 / proxy.len() as f64);
        Ok(Self {
            split,
            indices,
            yhat,
            method,
            source_model: source_model.into(),
            accuracy_vs_y: hits as f64 / n,
            accuracy_vs_a_proxy,
        })
    }

    pub fn len(&self) -> usize {
        self.yhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yhat.is_empty()
    }

    /// Writes `sample_index,y,a_if_known,yhat,method`.
    pub fn write_csv<W: Write>(&self, ds: &LabeledDataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_index", "y", "a_if_known", "yhat", "method"])?;
        let method = self.method.to_string();
        for (&i, &p) in self.indices.iter().zip(&self.yhat) {
            w.write_record([
                i.to_string(),
                ds.labels[i].to_string(),
                ds.attributes[i].to_string(),
                p.to_string(),
                method.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`write_csv`](Self::write_csv) against the
    /// same dataset; labels in the file must match it.
    pub fn read_csv<R: Read>(ds: &LabeledDataset, split: Split, reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            sample_index: usize,
            y: usize,
            #[allow(dead_code)]
            a_if_known: Option<usize>,
            yhat: usize,
            method: String,
        }
        let mut r = csv::Reader::from_reader(reader);
        let mut indices = Vec::new();
        let mut yhat = Vec::new();
        let mut method = None;
        for row in r.deserialize::<Row>() {
            let row = row?;
            if row.sample_index >= ds.len() || ds.labels[row.sample_index] != row.y {
                return Err(Error::Schema(format!(
                    "row for sample {} does not match the dataset",
                    row.sample_index
                )));
            }
            if ds.splits[row.sample_index] != split {
                return Err(Error::Schema(format!("sample {} is not in split '{split}'", row.sample_index)));
            }
            method.get_or_insert(row.method.parse::<InferenceMethod>()?);
            indices.push(row.sample_index);
            yhat.push(row.yhat);
        }
        let method = method.ok_or_else(|| Error::Schema("inference file has no rows".into()))?;
        Self::new(ds, split, indices, yhat, method, "csv")
    }
}

pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<MlpModel> {
    MlpModel::new(cfg, &mut rng::stream(seed, "init"))
}

/// Minibatch cross-entropy training on the train split.
pub fn train_erm(ds: &LabeledDataset, cfg: &ModelConfig, recipe: &TrainRecipe, seed: u64) -> Result<TrainOutput> {
    let model = init_model(cfg, seed)?;
    fit_ce(model, ds, &ds.indices(Split::Train), recipe, seed)
}

/// `ŷ = argmax` of the logits, ties to the lowest class.
pub fn predict_argmax(model: &MlpModel, ds: &LabeledDataset, split: Split) -> Result<GroupInference> {
    let idx = ds.indices(split);
    let (_, logits) = model.forward_blocked(&ds.gather(&idx), EVAL_BLOCK)?;
    GroupInference::new(ds, split, idx, predictions(&logits), InferenceMethod::plain(InferenceKind::Argmax), "erm")
}

/// `ŷ` = the class associated with each sample's true attribute.
pub fn oracle_inference(ds: &LabeledDataset, split: Split) -> Result<GroupInference> {
    let idx = ds.indices(split);
    let yhat = idx
        .iter()
        .map(|&i| {
            associated_class(ds.attributes[i], ds.classes).ok_or_else(|| {
                Error::Unsupported(format!(
                    "attribute {} has no associated class among {} classes",
                    ds.attributes[i], ds.classes
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GroupInference::new(ds, split, idx, yhat, InferenceMethod::plain(InferenceKind::Oracle), "oracle")
}

/// Replaces each `ŷ` independently with probability `p` by a uniform class
/// (which may equal the original).
pub fn inject_noise(inference: &GroupInference, ds: &LabeledDataset, p: f64, seed: u64) -> Result<GroupInference> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input("noise probability must lie in [0, 1]".into()));
    }
    let mut r = rng::stream(seed, "noise");
    let yhat = inference
        .yhat
        .iter()
        .map(|&v| {
            if r.random::<f64>() < p {
                r.random_range(0..ds.classes)
            } else {
                v
            }
        })
        .collect();
    let method = InferenceMethod {
        kind: inference.method.kind,
        noise_p: if p == 0.0 { inference.method.noise_p } else { Some(p) },
    };
    GroupInference::new(
        ds,
        inference.split,
        inference.indices.clone(),
        yhat,
        method,
        inference.source_model.clone(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Project representations onto their top two principal axes first.
    pub pca2: bool,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            pca2: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding; `None` when the points cannot supply `k` distinct seeds.
fn plus_plus<R: Rng + ?Sized>(x: &Matrix, k: usize, rng: &mut R) -> Option<Matrix> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = x.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(x.iter_rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    Matrix::from_rows(&centroids).ok()
}

/// Lloyd iterations from one seeding; `None` if a cluster empties.
fn lloyd(x: &Matrix, mut centroids: Matrix, max_iter: usize) -> Option<KMeans> {
    let (n, d, k) = (x.rows(), x.cols(), centroids.rows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, row) in x.iter_rows().enumerate() {
            let (c, _) = nearest(&centroids, row);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, row) in x.iter_rows().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(row) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
        centroids = sums;
        if !changed {
            break;
        }
    }
    let inertia = x.iter_rows().zip(&labels).map(|(r, &c)| sq_dist(r, centroids.row(c))).sum();
    Some(KMeans {
        centroids,
        labels,
        inertia,
    })
}

/// Best of `restarts` k-means++ runs by inertia.
pub fn kmeans(x: &Matrix, k: usize, cfg: &ClusterConfig) -> Result<KMeans> {
    if k == 0 || x.rows() < k {
        return Err(Error::Input(format!("cannot form {k} clusters from {} points", x.rows())));
    }
    let mut r = rng::stream(cfg.seed, "kmeans");
    let mut best: Option<KMeans> = None;
    for _ in 0..cfg.restarts.max(1) {
        let Some(seeds) = plus_plus(x, k, &mut r) else {
            continue;
        };
        if let Some(fit) = lloyd(x, seeds, cfg.max_iter) {
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Data(format!(
            "k-means left an empty cluster in all {} restarts",
            cfg.restarts.max(1)
        ))
    })
}

/// Top-two principal axes of `x` (rows are samples), by power iteration
/// with deflation on the covariance.
pub fn pca2(x: &Matrix) -> (Vec<f64>, Matrix) {
    let (mean, _) = x.column_stats();
    let d = x.cols();
    let mut centered = x.clone();
    for r in 0..centered.rows() {
        centered.row_mut(r).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let mut cov = centered.t_matmul(&centered).expect("square");
    let mut axes = Vec::new();
    for _ in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let mut next: Vec<f64> = cov.iter_rows().map(|row| dot(row, &v)).collect();
            let norm = dot(&next, &next).sqrt();
            if norm == 0.0 {
                break;
            }
            next.iter_mut().for_each(|x| *x /= norm);
            let done = (norm - lambda).abs() <= 1e-12 * norm;
            lambda = norm;
            v = next;
            if done {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                let val = cov.get(i, j) - lambda * v[i] * v[j];
                cov.set(i, j, val);
            }
        }
        axes.push(v);
    }
    (mean, Matrix::from_rows(&axes).expect("equal lengths"))
}

fn project(x: &Matrix, mean: &[f64], axes: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), axes.rows());
    for (r, row) in x.iter_rows().enumerate() {
        let c: Vec<f64> = row.iter().zip(mean).map(|(v, m)| v - m).collect();
        for (k, axis) in axes.iter_rows().enumerate() {
            out.set(r, k, dot(&c, axis));
        }
    }
    out
}

/// The cluster→class permutation maximizing agreement with `labels`
/// (first in lexicographic order among ties), with its accuracy.
pub fn best_assignment(clusters: &[usize], labels: &[usize], k: usize) -> Result<(Vec<usize>, f64)> {
    if k > MAX_CLUSTER_CLASSES {
        return Err(Error::Unsupported(format!(
            "cluster matching enumerates permutations and supports at most {MAX_CLUSTER_CLASSES} classes, got {k}"
        )));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&c, &y) in clusters.iter().zip(labels) {
        counts[c][y] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), 0usize);
    let mut first = true;
    loop {
        let score: usize = (0..k).map(|c| counts[c][perm[c]]).sum();
        if first || score > best.1 {
            best = (perm.clone(), score);
            first = false;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best.0, best.1 as f64 / clusters.len().max(1) as f64))
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Clusters train-split representations into `C` groups, maps clusters to
/// classes by the best permutation, and labels `split` (points outside the
/// train split go to the nearest train centroid).
pub fn predict_cluster(
    model: &MlpModel,
    ds: &LabeledDataset,
    split: Split,
    cfg: &ClusterConfig,
) -> Result<GroupInference> {
    let k = ds.classes;
    if k < 2 {
        return Err(Error::Input("clustering needs at least two classes".into()));
    }
    if k > MAX_CLUSTER_CLASSES {
        return Err(Error::Unsupported(format!(
            "cluster inference supports at most {MAX_CLUSTER_CLASSES} classes, got {k}"
        )));
    }
    let train = ds.indices(Split::Train);
    let (train_reps, _) = model.forward_blocked(&ds.gather(&train), EVAL_BLOCK)?;
    let pca = cfg.pca2.then(|| pca2(&train_reps));
    let space = |m: &Matrix| match &pca {
        Some((mean, axes)) => project(m, mean, axes),
        None => m.clone(),
    };
    let fit = kmeans(&space(&train_reps), k, cfg)?;
    let (perm, _) = best_assignment(&fit.labels, &ds.labels_of(&train), k)?;

    let (idx, clusters) = if split == Split::Train {
        (train, fit.labels)
    } else {
        let idx = ds.indices(split);
        let (reps, _) = model.forward_blocked(&ds.gather(&idx), EVAL_BLOCK)?;
        let pts = space(&reps);
        let c = pts.iter_rows().map(|r| nearest(&fit.centroids, r).0).collect();
        (idx, c)
    };
    let yhat = clusters.iter().map(|&c| perm[c]).collect();
    let method = InferenceMethod::plain(InferenceKind::Cluster);
    GroupInference::new(ds, split, idx, yhat, method, "erm")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_ds(rows: Vec<Vec<f64>>, labels: Vec<usize>, attrs: Vec<usize>, c: usize) -> LabeledDataset {
        let n = rows.len();
        LabeledDataset::new("t", Matrix::from_rows(&rows).unwrap(), labels, attrs, vec![Split::Train; n], c, c).unwrap()
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [
            InferenceMethod::plain(InferenceKind::Argmax),
            InferenceMethod::plain(InferenceKind::Cluster),
            InferenceMethod {
                kind: InferenceKind::Oracle,
                noise_p: Some(0.25),
            },
        ] {
            assert_eq!(m.to_string().parse::<InferenceMethod>().unwrap(), m);
        }
        assert_eq!(
            InferenceMethod {
                kind: InferenceKind::Oracle,
                noise_p: Some(0.1)
            }
            .to_string(),
            "oracle_noised(0.1)"
        );
        assert!("umap".parse::<InferenceMethod>().is_err());
    }

    #[test]
    fn four_point_clusters() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0]]).unwrap();
        let fit = kmeans(&x, 2, &ClusterConfig::default()).unwrap();
        assert_eq!(fit.labels[0], fit.labels[1]);
        assert_eq!(fit.labels[2], fit.labels[3]);
        assert_ne!(fit.labels[0], fit.labels[2]);
        let (_, acc) = best_assignment(&fit.labels, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn identical_points_fail_after_restarts() {
        let x = Matrix::from_rows(&vec![vec![1.0, 1.0]; 6]).unwrap();
        assert!(matches!(kmeans(&x, 3, &ClusterConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn assignment_beats_every_permutation() {
        let mut r = rng::stream(2, "perm");
        let k = 5;
        let clusters: Vec<usize> = (0..300).map(|_| r.random_range(0..k)).collect();
        let labels: Vec<usize> = clusters
            .iter()
            .map(|&c| if r.random::<f64>() < 0.6 { (c + 2) % k } else { r.random_range(0..k) })
            .collect();
        let (perm, acc) = best_assignment(&clusters, &labels, k).unwrap();
        let score = |p: &[usize]| clusters.iter().zip(&labels).filter(|(&c, &y)| p[c] == y).count() as f64 / 300.0;
        assert!((score(&perm) - acc).abs() < 1e-12);
        let mut p: Vec<usize> = (0..k).collect();
        loop {
            assert!(score(&p) <= acc);
            if !next_permutation(&mut p) {
                break;
            }
        }
        assert!(matches!(best_assignment(&[0], &[0], 9), Err(Error::Unsupported(_))));
    }

    #[test]
    fn pca_finds_dominant_axis() {
        let mut r = rng::stream(3, "pca");
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let t: f64 = r.random_range(-10.0..10.0);
                vec![t, 0.5 * t + r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)]
            })
            .collect();
        let (_, axes) = pca2(&Matrix::from_rows(&rows).unwrap());
        let a = axes.row(0);
        let expected = [1.0 / 1.25f64.sqrt(), 0.5 / 1.25f64.sqrt(), 0.0];
        assert!((dot(a, &expected).abs() - 1.0).abs() < 1e-3);
        assert!(dot(a, axes.row(1)).abs() < 1e-6);
    }

    #[test]
    fn argmax_of_zero_model_is_class_zero() {
        let ds = toy_ds(vec![vec![1.0, 2.0]; 4], vec![0, 1, 2, 1], vec![0, 1, 2, 0], 3);
        let cfg = ModelConfig {
            input_dim: 2,
            hidden: vec![3],
            classes: 3,
            projection: vec![],
        };
        let mut model = init_model(&cfg, 0).unwrap();
        model.params_mut().into_iter().for_each(|p| p.iter_mut().for_each(|v| *v = 0.0));
        let inf = predict_argmax(&model, &ds, Split::Train).unwrap();
        assert_eq!(inf.yhat, vec![0; 4]);
        assert!((inf.accuracy_vs_y - 0.25).abs() < 1e-12);
        assert!((inf.accuracy_vs_a_proxy.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noise_rates() {
        let n = 10_000;
        let ds = toy_ds(vec![vec![0.0]; n], (0..n).map(|i| i % 5).collect(), (0..n).map(|i| i % 5).collect(), 5);
        let base = oracle_inference(&ds, Split::Train).unwrap();
        assert_eq!(inject_noise(&base, &ds, 0.0, 1).unwrap().yhat, base.yhat);

        let all = inject_noise(&base, &ds, 1.0, 1).unwrap();
        let agree = all.yhat.iter().zip(&base.yhat).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!((agree - 0.2).abs() < 3.0 * (0.2f64 * 0.8 / n as f64).sqrt());

        // Replacement count: a changed label implies replacement, and
        // replacements keep the label with probability 1/5.
        let q = inject_noise(&base, &ds, 0.25, 2).unwrap();
        assert_eq!(q.method.noise_p, Some(0.25));
        let changed = q.yhat.iter().zip(&base.yhat).filter(|(a, b)| a != b).count() as f64;
        let p_change = 0.25 * 0.8;
        let sd = (n as f64 * p_change * (1.0 - p_change)).sqrt();
        assert!((changed - n as f64 * p_change).abs() < 3.0 * sd, "{changed}");
    }

    #[test]
    fn csv_round_trip() {
        let ds = toy_ds(vec![vec![0.0]; 6], vec![0, 1, 2, 0, 1, 2], vec![0, 1, 2, 1, 2, 0], 3);
        let inf = inject_noise(&oracle_inference(&ds, Split::Train).unwrap(), &ds, 0.5, 3).unwrap();
        let mut buf = Vec::new();
        inf.write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_index,y,a_if_known,yhat,method\n"));
        let back = GroupInference::read_csv(&ds, Split::Train, &buf[..]).unwrap();
        assert_eq!(back.yhat, inf.yhat);
        assert_eq!(back.indices, inf.indices);
        assert_eq!(back.method, inf.method);
    }
}
