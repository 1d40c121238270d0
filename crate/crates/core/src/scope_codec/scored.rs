use std::collections::BTreeMap;

use thiserror::Error;

use super::{Labeling, Scope};
use crate::corpus::Mention;
use crate::scalar::{argmax, Scalar};

/// Per-token class distributions for one scope. Anchor class 0 is NA and
/// class `k + 1` is category `k`; length class `z` is length `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopePrediction<T> {
    anchor_dist: Vec<Vec<T>>,
    length_dist: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictionError {
    #[error("anchor and length rows differ in count ({0} vs {1})")]
    RowCount(usize, usize),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
}

const SUM_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> ScopePrediction<T> {
    pub fn new(anchor_dist: Vec<Vec<T>>, length_dist: Vec<Vec<T>>) -> Result<Self, PredictionError> {
        if anchor_dist.len() != length_dist.len() {
            return Err(PredictionError::RowCount(anchor_dist.len(), length_dist.len()));
        }
        for (row, dist) in anchor_dist.iter().chain(&length_dist).enumerate() {
            let sum: f64 = dist.iter().map(|p| p.to_f64_lossy()).sum();
            let negative = dist.iter().any(|&p| p < T::zero());
            if negative || (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(PredictionError::NotNormalized {
                    row: row % anchor_dist.len().max(1),
                    sum,
                });
            }
        }
        Ok(Self {
            anchor_dist,
            length_dist,
        })
    }

    /// One-hot distributions reproducing a gold labeling.
    pub fn one_hot(labeling: &Labeling, categories: &[String], max_len: usize) -> Option<Self> {
        let anchors = labeling.anchor_classes(categories)?;
        let hot = |k: usize, n: usize| {
            let mut v = vec![T::zero(); n];
            v[k] = T::one();
            v
        };
        if labeling.lengths().iter().any(|&l| l > max_len) {
            return None;
        }
        Some(Self {
            anchor_dist: anchors.iter().map(|&k| hot(k, categories.len() + 1)).collect(),
            length_dist: labeling.lengths().iter().map(|&l| hot(l, max_len + 1)).collect(),
        })
    }

    pub fn anchor_dist(&self) -> &[Vec<T>] {
        &self.anchor_dist
    }

    pub fn length_dist(&self) -> &[Vec<T>] {
        &self.length_dist
    }

    pub fn len(&self) -> usize {
        self.anchor_dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_dist.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMention {
    pub mention: Mention,
    pub confidence: f64,
    pub source: Scope,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredDecode {
    pub mentions: Vec<DecodedMention>,
    pub dropped: usize,
}

/// Argmax decoding of one scope. Confidence is the product of the anchor
/// and length probabilities at the anchor token.
pub fn decode_scored<T: Scalar>(
    pred: &ScopePrediction<T>,
    scope: Scope,
    categories: &[String],
    sentence_len: usize,
) -> ScoredDecode {
    let mut out = ScoredDecode::default();
    for (pos, (ad, ld)) in pred.anchor_dist.iter().zip(&pred.length_dist).enumerate() {
        let class = argmax(ad);
        let len = argmax(ld);
        if class == 0 || len == 0 {
            continue;
        }
        let Some(category) = categories.get(class - 1) else {
            out.dropped += 1;
            continue;
        };
        match scope.span_at(pos, len, sentence_len) {
            Some((start, end)) => out.mentions.push(DecodedMention {
                mention: Mention::new(start, end, category.clone()),
                confidence: ad[class].to_f64_lossy() * ld[len].to_f64_lossy(),
                source: scope,
            }),
            None => out.dropped += 1,
        }
    }
    out
}

/// Union of all scopes' mentions. A span claimed with several categories
/// keeps the most confident one, ties going to the smallest category name.
pub fn aggregate(decoded: &[Vec<DecodedMention>]) -> Vec<Mention> {
    let mut best: BTreeMap<(usize, usize), (f64, &str)> = BTreeMap::new();
    for d in decoded.iter().flatten() {
        let cand = (d.confidence, d.mention.category.as_str());
        best.entry(d.mention.span())
            .and_modify(|cur| {
                if cand.0 > cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                    *cur = cand;
                }
            })
            .or_insert(cand);
    }
    best.into_iter()
        .map(|((start, end), (_, cat))| Mention::new(start, end, cat))
        .collect()
}
