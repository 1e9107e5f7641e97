//! Ordered target-statistic encoding for categorical features.
//!
//! Training rows are visited in a seeded random permutation; the encoding
//! of a row uses only rows strictly before it in that permutation, so a
//! row's own target never leaks into its feature. Targets are first
//! bucketized: bucket 0 holds exact zeros (the natural class under zero
//! inflation) and the remaining buckets split the positive targets by
//! quantile.
//!
//! The per-row statistic is `(countInClass + prior) / (totalCount + 1)`
//! where `countInClass` counts earlier rows of the same class whose target
//! bucket matches the current row's bucket and `totalCount` counts all
//! earlier rows of the same class. With prior in (0, 1) every encoded
//! value lands strictly inside (0, 1).
//!
//! At inference no target exists, so a class is encoded by the expectation
//! of the training statistic under the class's full-training bucket
//! distribution; unseen classes fall back to the bare prior.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("empty dataset")]
    Empty,
    #[error("need at least 2 target buckets, got {0}")]
    TooFewBuckets(usize),
    #[error("prior must lie strictly inside (0, 1), got {0}")]
    BadPrior(f64),
    #[error("row {row} carries categorical code {code} outside the dictionary")]
    BadCode { row: usize, code: u32 },
}

/// Fitted ordered-TS state for one categorical column.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedTsEncoder {
    seed: u64,
    n_buckets: usize,
    prior: f64,
    /// Upper edges splitting positive targets into buckets 1..K-1.
    bucket_edges: Vec<f64>,
    /// Per class: counts[bucket] over the full training set.
    class_counts: Vec<Vec<u32>>,
    class_totals: Vec<u32>,
    labels: Vec<String>,
}

impl OrderedTsEncoder {
    /// Fit the encoder and produce the leakage-free training encodings.
    ///
    /// `codes` are the per-row class codes of one categorical column,
    /// `labels` its dictionary, `target` the training target. The returned
    /// array is aligned with the original row order.
    pub fn fit(
        codes: &[u32],
        labels: &[String],
        target: &[f64],
        seed: u64,
        n_buckets: usize,
        prior: f64,
    ) -> Result<(Self, Vec<f64>), EncoderError> {
        let n = codes.len();
        if n == 0 || target.len() != n {
            return Err(EncoderError::Empty);
        }
        if n_buckets < 2 {
            return Err(EncoderError::TooFewBuckets(n_buckets));
        }
        if !(prior > 0.0 && prior < 1.0) {
            return Err(EncoderError::BadPrior(prior));
        }
        for (row, &c) in codes.iter().enumerate() {
            if c as usize >= labels.len() {
                return Err(EncoderError::BadCode { row, code: c });
            }
        }

        let bucket_edges = positive_quantile_edges(target, n_buckets);
        let buckets: Vec<usize> = target
            .iter()
            .map(|&y| assign_bucket(y, &bucket_edges))
            .collect();

        let mut permutation: Vec<usize> = (0..n).collect();
        let mut rng = StdRng::seed_from_u64(seed);
        permutation.shuffle(&mut rng);

        let n_classes = labels.len();
        let mut counts = vec![vec![0u32; n_buckets]; n_classes];
        let mut totals = vec![0u32; n_classes];
        let mut encoded = vec![0.0; n];
        for &row in &permutation {
            let class = codes[row] as usize;
            let b = buckets[row];
            encoded[row] =
                (f64::from(counts[class][b]) + prior) / (f64::from(totals[class]) + 1.0);
            counts[class][b] += 1;
            totals[class] += 1;
        }

        Ok((
            Self {
                seed,
                n_buckets,
                prior,
                bucket_edges,
                class_counts: counts,
                class_totals: totals,
                labels: labels.to_vec(),
            },
            encoded,
        ))
    }

    /// Inference encoding for a class label: the expected ordered statistic
    /// under the class's full-training bucket distribution. Unseen classes
    /// encode as the bare prior.
    pub fn encode_label(&self, label: &str) -> f64 {
        match self.labels.iter().position(|l| l == label) {
            Some(class) => self.encode_class(class),
            None => self.prior,
        }
    }

    /// Inference encoding by class index in this encoder's dictionary.
    pub fn encode_class(&self, class: usize) -> f64 {
        if class >= self.labels.len() || self.class_totals[class] == 0 {
            return self.prior;
        }
        let total = f64::from(self.class_totals[class]);
        let mut value = 0.0;
        for &c in &self.class_counts[class] {
            let weight = f64::from(c) / total;
            value += weight * (f64::from(c) + self.prior) / (total + 1.0);
        }
        value
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn bucket_edges(&self) -> &[f64] {
        &self.bucket_edges
    }

    pub fn class_counts(&self) -> &[Vec<u32>] {
        &self.class_counts
    }

    pub fn class_totals(&self) -> &[u32] {
        &self.class_totals
    }

    /// Reassemble from serialized state.
    pub fn from_parts(
        seed: u64,
        n_buckets: usize,
        prior: f64,
        bucket_edges: Vec<f64>,
        labels: Vec<String>,
        class_counts: Vec<Vec<u32>>,
        class_totals: Vec<u32>,
    ) -> Self {
        Self {
            seed,
            n_buckets,
            prior,
            bucket_edges,
            class_counts,
            class_totals,
            labels,
        }
    }
}

/// Quantile edges over the positive targets for buckets 1..K-1; bucket 0
/// is reserved for exact zeros.
fn positive_quantile_edges(target: &[f64], n_buckets: usize) -> Vec<f64> {
    let mut positive: Vec<f64> = target.iter().copied().filter(|&y| y > 0.0).collect();
    positive.sort_by(|a, b| a.partial_cmp(b).expect("finite targets"));
    let groups = n_buckets - 1;
    let mut edges = Vec::with_capacity(groups.saturating_sub(1));
    if positive.is_empty() {
        return edges;
    }
    for g in 1..groups {
        let idx = (g * positive.len()) / groups;
        edges.push(positive[idx.min(positive.len() - 1)]);
    }
    edges
}

/// Bucket index of a target value: 0 for zero, otherwise 1 + the number of
/// edges at or below the value.
fn assign_bucket(y: f64, edges: &[f64]) -> usize {
    if y == 0.0 {
        return 0;
    }
    let mut b = 1;
    for &e in edges {
        if y >= e {
            b += 1;
        } else {
            break;
        }
    }
    b
}
