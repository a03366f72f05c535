use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::IdSequence;

/// Multiset of unordered same-identity frame pairs `(a, b)` with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairMultiset {
    counts: BTreeMap<(u32, u32), u64>,
}

impl PairMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, a: u32, b: u32) {
        let key = if a < b { (a, b) } else { (b, a) };
        debug_assert!(key.0 != key.1);
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn count(&self, a: u32, b: u32) -> u64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Number of distinct pairs.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total size including multiplicities.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Size of the min-count intersection with `other`.
    pub fn intersection_size(&self, other: &PairMultiset) -> u64 {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(k, &c)| c.min(large.counts.get(k).copied().unwrap_or(0)))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// Every identity with `k` frames contributes its `C(k, 2)` frame pairs.
pub fn decompose_pairs(ids: &[IdSequence]) -> PairMultiset {
    let mut out = PairMultiset::new();
    for seq in ids {
        let f = seq.frames();
        for (j, &a) in f.iter().enumerate() {
            for &b in &f[j + 1..] {
                out.add(a, b);
            }
        }
    }
    out
}

/// Raw pair counts behind precision and recall; pooling sums these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub true_positives: u64,
    pub predicted_pairs: u64,
    pub ground_truth_pairs: u64,
}

impl PairCounts {
    pub fn precision(&self) -> f64 {
        ratio_or_vacuous(self.true_positives, self.predicted_pairs, self.ground_truth_pairs)
    }

    pub fn recall(&self) -> f64 {
        ratio_or_vacuous(self.true_positives, self.ground_truth_pairs, self.predicted_pairs)
    }
}

impl std::ops::Add for PairCounts {
    type Output = PairCounts;

    fn add(self, rhs: Self) -> Self {
        Self {
            true_positives: self.true_positives + rhs.true_positives,
            predicted_pairs: self.predicted_pairs + rhs.predicted_pairs,
            ground_truth_pairs: self.ground_truth_pairs + rhs.ground_truth_pairs,
        }
    }
}

/// `num / den`; an empty denominator scores 1.0 when the counterpart is
/// empty too and 0.0 otherwise.
pub(crate) fn ratio_or_vacuous(num: u64, den: u64, counterpart: u64) -> f64 {
    if den == 0 {
        if counterpart == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn pair_counts(pred: &[IdSequence], gt: &[IdSequence]) -> PairCounts {
    let p = decompose_pairs(pred);
    let g = decompose_pairs(gt);
    PairCounts {
        true_positives: p.intersection_size(&g),
        predicted_pairs: p.total(),
        ground_truth_pairs: g.total(),
    }
}

/// Pairwise `(precision, recall)` of `pred` against `gt`.
pub fn pair_precision_recall(pred: &[IdSequence], gt: &[IdSequence]) -> (f64, f64) {
    let c = pair_counts(pred, gt);
    (c.precision(), c.recall())
}
