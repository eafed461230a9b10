//! Contrastive batch construction from class labels and stage-1 predictions.
//!
//! Samples are bucketed by `(y, ŷ)` once; every eligibility set used by a
//! sampling mode is a union of buckets, so draws never scan the dataset.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    CncTwoSided,
    /// Same draws as two-sided; only the original anchor is contrasted.
    CncOneSided,
    /// Negatives from any other class, ignoring predictions.
    DifferentClass,
    /// Negatives with the anchor's prediction, ignoring class.
    SamePrediction,
    /// Positives by class, negatives by other class; predictions unused.
    Supcon,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 5] = [
        SamplerMode::CncTwoSided,
        SamplerMode::CncOneSided,
        SamplerMode::DifferentClass,
        SamplerMode::SamePrediction,
        SamplerMode::Supcon,
    ];

    pub fn two_sided(self) -> bool {
        self != SamplerMode::CncOneSided
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::CncTwoSided => "cnc_two_sided",
            SamplerMode::CncOneSided => "cnc_one_sided",
            SamplerMode::DifferentClass => "different_class",
            SamplerMode::SamePrediction => "same_prediction",
            SamplerMode::Supcon => "supcon",
        }
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown sampler mode '{s}'")))
    }
}

/// Positions (into the `y`/`ŷ` arrays the pools were built from) of one batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub negatives2: Vec<usize>,
    pub mode: SamplerMode,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len() + self.positives.len() + self.negatives.len() + self.negatives2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All positions in gather order: anchors, positives, negatives, negatives2.
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.anchors
            .iter()
            .chain(&self.positives)
            .chain(&self.negatives)
            .chain(&self.negatives2)
            .copied()
    }
}

#[derive(Debug, Clone)]
pub struct IndexPools {
    classes: usize,
    y: Vec<usize>,
    yhat: Vec<usize>,
    /// `pools[y * classes + ŷ]`
    pools: Vec<Vec<usize>>,
}

impl IndexPools {
    pub fn new(y: &[usize], yhat: &[usize], classes: usize) -> Result<Self> {
        if y.len() != yhat.len() {
            return Err(Error::Dimension(format!(
                "{} labels vs {} predictions",
                y.len(),
                yhat.len()
            )));
        }
        if y.iter().chain(yhat).any(|&c| c >= classes) {
            return Err(Error::Input("class id out of range".into()));
        }
        let mut pools = vec![Vec::new(); classes * classes];
        for (i, (&yi, &pi)) in y.iter().zip(yhat).enumerate() {
            pools[yi * classes + pi].push(i);
        }
        Ok(Self {
            classes,
            y: y.to_vec(),
            yhat: yhat.to_vec(),
            pools,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn pool(&self, y: usize, yhat: usize) -> &[usize] {
        &self.pools[y * self.classes + yhat]
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn prediction(&self, i: usize) -> usize {
        self.yhat[i]
    }

    fn union<'a>(&'a self, keep: impl Fn(usize, usize) -> bool + 'a) -> Union<'a> {
        let mut parts = Vec::new();
        for y in 0..self.classes {
            for p in 0..self.classes {
                let pool = self.pool(y, p);
                if keep(y, p) && !pool.is_empty() {
                    parts.push(pool);
                }
            }
        }
        Union { parts }
    }

    /// Primary anchors eligible under `mode`, in ascending position order.
    pub fn eligible_anchors(&self, mode: SamplerMode) -> Vec<usize> {
        match mode {
            SamplerMode::Supcon => (0..self.len()).collect(),
            _ => (0..self.len()).filter(|&i| self.y[i] == self.yhat[i]).collect(),
        }
    }

    fn anchor_pool(&self, mode: SamplerMode, y: usize, yhat: usize) -> Union<'_> {
        match mode {
            SamplerMode::Supcon => self.union(move |cy, _| cy == y),
            _ => self.union(move |cy, cp| cy == y && cp == yhat),
        }
    }

    fn positive_pool(&self, mode: SamplerMode, y: usize, yhat: usize) -> Union<'_> {
        match mode {
            SamplerMode::Supcon => self.union(move |cy, _| cy == y),
            _ => self.union(move |cy, cp| cy == y && cp != yhat),
        }
    }

    fn negative_pool(&self, mode: SamplerMode, y: usize, yhat: usize) -> Union<'_> {
        match mode {
            SamplerMode::CncTwoSided | SamplerMode::CncOneSided => {
                self.union(move |cy, cp| cy != y && cp == yhat)
            }
            SamplerMode::DifferentClass | SamplerMode::Supcon => self.union(move |cy, _| cy != y),
            SamplerMode::SamePrediction => self.union(move |_, cp| cp == yhat),
        }
    }

    /// Builds one batch around a given primary anchor.
    pub fn batch_for_anchor<R: Rng + ?Sized>(
        &self,
        anchor: usize,
        m: usize,
        n: usize,
        mode: SamplerMode,
        rng: &mut R,
    ) -> Result<ContrastiveBatch> {
        if m == 0 || n == 0 {
            return Err(Error::Config("M and N must be >= 1".into()));
        }
        let (y, p) = (self.y[anchor], self.yhat[anchor]);
        if mode != SamplerMode::Supcon && y != p {
            return Err(Error::Input(format!(
                "anchor {anchor} is not correctly predicted"
            )));
        }
        let mut anchors = vec![anchor];
        anchors.extend(
            self.anchor_pool(mode, y, p)
                .draw(m - 1, rng)
                .map_err(|_| exhausted("anchors", y, p))?,
        );
        let positives = self
            .positive_pool(mode, y, p)
            .draw(m, rng)
            .map_err(|_| exhausted("positives", y, p))?;
        let negatives = self
            .negative_pool(mode, y, p)
            .draw(n, rng)
            .map_err(|_| exhausted("negatives", y, p))?;
        let pos1 = positives[0];
        let (y1, p1) = (self.y[pos1], self.yhat[pos1]);
        let negatives2 = self
            .negative_pool(mode, y1, p1)
            .draw(n, rng)
            .map_err(|_| exhausted("role-swapped negatives", y1, p1))?;
        Ok(ContrastiveBatch {
            anchors,
            positives,
            negatives,
            negatives2,
            mode,
        })
    }

    /// Draws a primary anchor uniformly among eligible ones, then a batch.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        m: usize,
        n: usize,
        mode: SamplerMode,
        rng: &mut R,
    ) -> Result<ContrastiveBatch> {
        let eligible = self.eligible_anchors(mode);
        if eligible.is_empty() {
            return Err(Error::SamplerExhausted(
                "anchors (no correctly predicted samples)".into(),
            ));
        }
        let a = eligible[rng.random_range(0..eligible.len())];
        self.batch_for_anchor(a, m, n, mode, rng)
    }

    /// One batch per eligible anchor, anchors visited in a fresh random order.
    pub fn epoch_schedule<'a, R: Rng + ?Sized>(
        &'a self,
        m: usize,
        n: usize,
        mode: SamplerMode,
        rng: &'a mut R,
    ) -> EpochSchedule<'a, R> {
        let mut order = self.eligible_anchors(mode);
        order.shuffle(rng);
        EpochSchedule {
            pools: self,
            order,
            pos: 0,
            m,
            n,
            mode,
            rng,
        }
    }
}

fn exhausted(role: &str, y: usize, yhat: usize) -> Error {
    Error::SamplerExhausted(format!("{role} pool for anchor class {y}, prediction {yhat}"))
}

struct Union<'a> {
    parts: Vec<&'a [usize]>,
}

impl Union<'_> {
    fn size(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    fn at(&self, mut k: usize) -> usize {
        for p in &self.parts {
            if k < p.len() {
                return p[k];
            }
            k -= p.len();
        }
        unreachable!("index within union size")
    }

    /// Without replacement when the union is large enough, with otherwise.
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<usize>, ()> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let size = self.size();
        if size == 0 {
            return Err(());
        }
        if size < count {
            Ok((0..count).map(|_| self.at(rng.random_range(0..size))).collect())
        } else {
            Ok(index::sample(rng, size, count)
                .into_iter()
                .map(|k| self.at(k))
                .collect())
        }
    }
}

pub struct EpochSchedule<'a, R: Rng + ?Sized> {
    pools: &'a IndexPools,
    order: Vec<usize>,
    pos: usize,
    m: usize,
    n: usize,
    mode: SamplerMode,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> EpochSchedule<'_, R> {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl<R: Rng + ?Sized> Iterator for EpochSchedule<'_, R> {
    type Item = Result<ContrastiveBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let anchor = *self.order.get(self.pos)?;
        self.pos += 1;
        Some(
            self.pools
                .batch_for_anchor(anchor, self.m, self.n, self.mode, &mut *self.rng),
        )
    }
}

/// Which eligibility predicates hold for every member of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PredicateCheck {
    /// Every anchor has `ŷ = y`.
    pub anchors_correct: bool,
    /// Every anchor shares the primary anchor's class.
    pub anchors_same_class: bool,
    pub positives_same_class: bool,
    /// Every positive's prediction differs from the primary anchor's.
    pub positives_diff_prediction: bool,
    pub negatives_diff_class: bool,
    pub negatives_same_prediction: bool,
    /// Role-swapped negatives relative to the first positive.
    pub negatives2_diff_class: bool,
    pub negatives2_same_prediction: bool,
}

impl PredicateCheck {
    pub fn all(&self) -> bool {
        self.anchors_correct
            && self.anchors_same_class
            && self.positives_same_class
            && self.positives_diff_prediction
            && self.negatives_diff_class
            && self.negatives_same_prediction
            && self.negatives2_diff_class
            && self.negatives2_same_prediction
    }
}

pub fn check_predicates(batch: &ContrastiveBatch, y: &[usize], yhat: &[usize]) -> PredicateCheck {
    let a0 = batch.anchors[0];
    let (ya, pa) = (y[a0], yhat[a0]);
    let p1 = batch.positives[0];
    let (y1, q1) = (y[p1], yhat[p1]);
    PredicateCheck {
        anchors_correct: batch.anchors.iter().all(|&i| y[i] == yhat[i]),
        anchors_same_class: batch.anchors.iter().all(|&i| y[i] == ya),
        positives_same_class: batch.positives.iter().all(|&i| y[i] == ya),
        positives_diff_prediction: batch.positives.iter().all(|&i| yhat[i] != pa),
        negatives_diff_class: batch.negatives.iter().all(|&i| y[i] != ya),
        negatives_same_prediction: batch.negatives.iter().all(|&i| yhat[i] == pa),
        negatives2_diff_class: batch.negatives2.iter().all(|&i| y[i] != y1),
        negatives2_same_prediction: batch.negatives2.iter().all(|&i| yhat[i] == q1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::collections::BTreeSet;

    const Y: [usize; 4] = [0, 0, 1, 1];
    const YHAT: [usize; 4] = [0, 1, 1, 0];

    #[test]
    fn pools_partition_positions() {
        let pools = IndexPools::new(&Y, &YHAT, 2).unwrap();
        assert_eq!(pools.pool(0, 0), &[0]);
        assert_eq!(pools.pool(0, 1), &[1]);
        assert_eq!(pools.pool(1, 1), &[2]);
        assert_eq!(pools.pool(1, 0), &[3]);

        let diag = IndexPools::new(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        for y in 0..3 {
            for p in 0..3 {
                assert_eq!(diag.pool(y, p).is_empty(), y != p);
            }
        }
        let one = IndexPools::new(&[1], &[0], 2).unwrap();
        assert_eq!(one.pool(1, 0), &[0]);
    }

    #[test]
    fn random_pool_sizes_match_recount() {
        let mut r = rng::stream(11, "pools");
        let y: Vec<usize> = (0..1000).map(|_| r.random_range(0..3)).collect();
        let p: Vec<usize> = (0..1000).map(|_| r.random_range(0..3)).collect();
        let pools = IndexPools::new(&y, &p, 3).unwrap();
        let mut total = 0;
        for cy in 0..3 {
            for cp in 0..3 {
                let brute = (0..1000).filter(|&i| y[i] == cy && p[i] == cp).count();
                assert_eq!(pools.pool(cy, cp).len(), brute);
                total += brute;
            }
        }
        assert_eq!(total, 1000);
    }

    #[test]
    fn toy_eligibility_sets() {
        let pools = IndexPools::new(&Y, &YHAT, 2).unwrap();
        assert_eq!(pools.eligible_anchors(SamplerMode::CncTwoSided), vec![0, 2]);
        let mut r = rng::stream(0, "toy");
        for _ in 0..50 {
            let b = pools.batch_for_anchor(0, 2, 2, SamplerMode::CncTwoSided, &mut r).unwrap();
            assert!(b.anchors.iter().all(|&i| i == 0));
            assert!(b.positives.iter().all(|&i| i == 1));
            assert!(b.negatives.iter().all(|&i| i == 3));
            // pos1 = sample 1 (y=0, ŷ=1): negatives2 from {y≠0, ŷ=1} = {2}
            assert!(b.negatives2.iter().all(|&i| i == 2));

            let s = pools.batch_for_anchor(0, 1, 3, SamplerMode::Supcon, &mut r).unwrap();
            let pos: BTreeSet<_> = s.positives.iter().copied().collect();
            assert!(pos.is_subset(&[0, 1].into()));
            let neg: BTreeSet<_> = s.negatives.iter().copied().collect();
            assert!(neg.is_subset(&[2, 3].into()));
        }
    }

    #[test]
    fn perfect_predictions_exhaust_positives() {
        let pools = IndexPools::new(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        let mut r = rng::stream(0, "x");
        let err = pools.sample_batch(1, 1, SamplerMode::CncTwoSided, &mut r).unwrap_err();
        assert!(matches!(err, Error::SamplerExhausted(ref s) if s.contains("positives")));
    }

    #[test]
    fn batch_size_and_replacement_policy() {
        let pools = IndexPools::new(&Y, &YHAT, 2).unwrap();
        let mut r = rng::stream(1, "x");
        let b = pools.sample_batch(3, 5, SamplerMode::CncTwoSided, &mut r).unwrap();
        assert_eq!(b.len(), 2 * 3 + 2 * 5);

        // Large pools: draws are distinct.
        let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let p: Vec<usize> = (0..200).map(|i| if i % 4 < 2 { i % 2 } else { 1 - i % 2 }).collect();
        let pools = IndexPools::new(&y, &p, 2).unwrap();
        let b = pools.sample_batch(8, 8, SamplerMode::CncTwoSided, &mut r).unwrap();
        let uniq: BTreeSet<_> = b.positives.iter().collect();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn epoch_has_one_batch_per_eligible_anchor_and_is_deterministic() {
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let p: Vec<usize> = (0..60).map(|i| if i % 7 == 0 { (i + 1) % 3 } else { i % 3 }).collect();
        let pools = IndexPools::new(&y, &p, 3).unwrap();
        let k = pools.eligible_anchors(SamplerMode::CncTwoSided).len();
        let run = |seed| {
            let mut r = rng::stream(seed, "sampler");
            pools
                .epoch_schedule(4, 4, SamplerMode::CncTwoSided, &mut r)
                .collect::<Result<Vec<_>>>()
                .unwrap()
        };
        let a = run(5);
        assert_eq!(a.len(), k);
        assert_eq!(a, run(5));
        assert_ne!(a, run(6));
        let primaries: BTreeSet<_> = a.iter().map(|b| b.anchors[0]).collect();
        assert_eq!(primaries.len(), k);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SamplerMode::ALL {
            assert_eq!(m.as_str().parse::<SamplerMode>().unwrap(), m);
        }
    }
}
