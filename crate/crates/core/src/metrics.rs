//! NDCG@k and MAP@k over graded labels.

use alloc::string::String;
use alloc::vec::Vec;

/// Minimum grade counted as relevant by [`map_at_k`].
pub const MAP_RELEVANT_GRADE: u8 = 1;

/// Scored documents of one query in their original order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl QueryRanking {
    pub fn new(query_id: impl Into<String>, scores: Vec<f64>, labels: Vec<u8>) -> Self {
        assert_eq!(scores.len(), labels.len(), "one score per document");
        Self {
            query_id: query_id.into(),
            scores,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels in descending score order; equal scores keep input order.
    pub fn ranked_labels(&self) -> Vec<u8> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order.into_iter().map(|i| self.labels[i]).collect()
    }
}

fn gain(label: u8) -> f64 {
    libm::exp2(f64::from(label)) - 1.0
}

fn dcg(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / libm::log2(i as f64 + 2.0))
        .sum()
}

/// `DCG@k / IDCG@k` with gain `2^rel − 1` and discount `log2(rank + 1)`.
/// Queries without any positive label score 0.
pub fn ndcg_at_k(ranking: &QueryRanking, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    let mut ideal = ranking.labels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(&ranking.ranked_labels(), k) / idcg
}

/// Average precision over the top k, normalized by `min(#relevant, k)`.
/// Queries without relevant documents score 0.
pub fn map_at_k(ranking: &QueryRanking, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    let total = ranking
        .labels
        .iter()
        .filter(|&&l| l >= MAP_RELEVANT_GRADE)
        .count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranking.ranked_labels().iter().take(k).enumerate() {
        if l >= MAP_RELEVANT_GRADE {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total.min(k) as f64
}

/// Arithmetic mean with a fixed left-to-right reduction; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
