//! Top-K ranking metrics (REC, PREC, MAP, NDCG at K), split evaluation
//! with train-item masking, and Recall-based early stopping.

use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;

pub const DEFAULT_K: usize = 5;

/// Which held-out split to evaluate. Test-time ranking masks both train
/// and validation positives; validation masks train only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

/// |ranked ∩ relevant| / |relevant|.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    check_metric_inputs(ranked, relevant, k);
    hits(ranked, relevant) as f64 / relevant.len() as f64
}

/// |ranked ∩ relevant| / k.
pub fn precision_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    check_metric_inputs(ranked, relevant, k);
    hits(ranked, relevant) as f64 / k as f64
}

/// Truncated average precision: mean of precision@p over hit positions p,
/// normalized by min(|relevant|, k).
pub fn map_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    check_metric_inputs(ranked, relevant, k);
    let mut hits_so_far = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits_so_far += 1;
            sum += hits_so_far as f64 / (pos + 1) as f64;
        }
    }
    sum / relevant.len().min(k) as f64
}

/// Binary-relevance NDCG: DCG discounts hits by 1/log2(rank+1), IDCG
/// front-loads min(|relevant|, k) hits.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    check_metric_inputs(ranked, relevant, k);
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if relevant.binary_search(item).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    dcg / ideal
}

fn check_metric_inputs(ranked: &[u32], relevant: &[u32], k: usize) {
    assert!(k >= 1, "metrics need k >= 1");
    assert!(ranked.len() <= k, "ranked list longer than k");
    assert!(!relevant.is_empty(), "metrics on an empty relevant set (skip the user instead)");
    debug_assert!(relevant.windows(2).all(|w| w[0] < w[1]), "relevant must be sorted");
}

fn hits(ranked: &[u32], relevant: &[u32]) -> usize {
    ranked
        .iter()
        .filter(|i| relevant.binary_search(i).is_ok())
        .count()
}

/// Indices of the top-k finite scores, ties broken by ascending item
/// index. Non-finite entries (masked items) never appear.
pub fn top_k_ranked(scores: &[f64], k: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| scores[i as usize].is_finite())
        .collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Aggregate metrics over users with at least one positive in the split;
/// per-user vectors are kept for paired comparisons.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub map: f64,
    pub ndcg: f64,
    pub n_users: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_user: Option<PerUserMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerUserMetrics {
    pub users: Vec<u32>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub map: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl MetricsReport {
    pub fn without_per_user(mut self) -> Self {
        self.per_user = None;
        self
    }
}

/// Evaluates a scoring function over a split: per user, scores the whole
/// catalog, masks already-seen positives (train for validation; train and
/// validation for test), ranks top-k, and averages the four metrics.
/// Users with no positives in the split are skipped, not zero-filled.
pub fn evaluate_scores<F>(
    dataset: &InteractionDataset,
    split: Split,
    k: usize,
    mut score_user: F,
) -> MetricsReport
where
    F: FnMut(u32) -> Vec<f64>,
{
    let mut users = Vec::new();
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let mut map = Vec::new();
    let mut ndcg = Vec::new();

    for u in 0..dataset.n_users() as u32 {
        let relevant = match split {
            Split::Valid => &dataset.valid[u as usize],
            Split::Test => &dataset.test[u as usize],
        };
        if relevant.is_empty() {
            continue;
        }
        let mut scores = score_user(u);
        assert_eq!(scores.len(), dataset.n_items(), "score vector length mismatch");
        for &i in &dataset.train[u as usize] {
            scores[i as usize] = f64::NEG_INFINITY;
        }
        if split == Split::Test {
            for &i in &dataset.valid[u as usize] {
                scores[i as usize] = f64::NEG_INFINITY;
            }
        }
        let ranked = top_k_ranked(&scores, k);
        users.push(u);
        recall.push(recall_at_k(&ranked, relevant, k));
        precision.push(precision_at_k(&ranked, relevant, k));
        map.push(map_at_k(&ranked, relevant, k));
        ndcg.push(ndcg_at_k(&ranked, relevant, k));
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    MetricsReport {
        k,
        recall: mean(&recall),
        precision: mean(&precision),
        map: mean(&map),
        ndcg: mean(&ndcg),
        n_users: users.len(),
        per_user: Some(PerUserMetrics {
            users,
            recall,
            precision,
            map,
            ndcg,
        }),
    }
}

/// Early stopping on a maximized criterion (validation Recall@K): keeps
/// the best value and epoch, and stops once more than `patience` epochs
/// pass without strict improvement. Epochs are 0-indexed.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    best_value: Option<f64>,
    best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_value: None,
            best_epoch: 0,
        }
    }

    /// Records this epoch's criterion; returns true when training should
    /// stop. `improved()` right after tells whether this epoch set a new
    /// best (i.e. should be checkpointed).
    pub fn should_stop(&mut self, epoch: usize, value: f64) -> bool {
        match self.best_value {
            None => {
                self.best_value = Some(value);
                self.best_epoch = epoch;
            }
            Some(best) if value > best => {
                self.best_value = Some(value);
                self.best_epoch = epoch;
            }
            _ => {}
        }
        epoch - self.best_epoch > self.patience
    }

    pub fn is_best(&self, epoch: usize) -> bool {
        self.best_epoch == epoch && self.best_value.is_some()
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best_value
    }
}
