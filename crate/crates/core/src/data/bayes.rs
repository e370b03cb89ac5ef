use super::mmf::{FeatureMatrix, Modality};
use super::synth::{BitClass, GroundTruthLedger, UserKeys};

/// Which observations the oracle is allowed to condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleView {
    Joint,
    VisualOnly,
    TextualOnly,
}

impl OracleView {
    fn sees(self, modality: Modality) -> bool {
        matches!(
            (self, modality),
            (OracleView::Joint, _)
                | (OracleView::VisualOnly, Modality::Visual)
                | (OracleView::TextualOnly, Modality::Textual)
        )
    }
}

/// Closed-form Bayes predictor over the synthetic construction: given the
/// ledger (dimension classes, noise level, user keys) and observed
/// features, computes the exact posterior relevance probability. Serves as
/// the performance ceiling for trained models and as the ground-truth
/// decoder in tests.
pub struct BayesOracle<'a> {
    ledger: &'a GroundTruthLedger,
    visual: &'a FeatureMatrix,
    textual: &'a FeatureMatrix,
}

impl<'a> BayesOracle<'a> {
    /// Feature matrices must be row-aligned with whatever item indexing
    /// the caller scores against (usually the dataset vocabulary).
    pub fn new(
        ledger: &'a GroundTruthLedger,
        visual: &'a FeatureMatrix,
        textual: &'a FeatureMatrix,
    ) -> Self {
        assert_eq!(visual.cols, ledger.config.d1(), "visual dims mismatch");
        assert_eq!(textual.cols, ledger.config.d2(), "textual dims mismatch");
        assert_eq!(visual.rows, textual.rows);
        BayesOracle {
            ledger,
            visual,
            textual,
        }
    }

    /// P(bit = 1 | one observation of its +-1 code under additive
    /// N(0, sigma^2) noise): the likelihood ratio is exp(2x / sigma^2).
    fn bit_posterior(&self, x: f64) -> f64 {
        let sigma = self.ledger.config.noise_sigma;
        if sigma == 0.0 {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                0.0
            } else {
                0.5
            }
        } else {
            crate::numcore::sigmoid(2.0 * x / (sigma * sigma))
        }
    }

    /// Combined posterior from both observations of a redundant bit
    /// (logits add).
    fn bit_posterior_two(&self, x1: f64, x2: f64) -> f64 {
        let sigma = self.ledger.config.noise_sigma;
        if sigma == 0.0 {
            let s = x1 + x2;
            if s > 0.0 {
                1.0
            } else if s < 0.0 {
                0.0
            } else {
                0.5
            }
        } else {
            crate::numcore::sigmoid(2.0 * (x1 + x2) / (sigma * sigma))
        }
    }

    fn class_bit_probs(&self, item: usize, class: BitClass, view: OracleView) -> Vec<f64> {
        let cfg = &self.ledger.config;
        match class {
            BitClass::Unique1 => {
                let n = cfg.bits_unique_1;
                match self.ledger.range(Modality::Visual, BitClass::Unique1) {
                    Some(r) if view.sees(Modality::Visual) => self.visual.row(item)[r.start..r.end]
                        .iter()
                        .map(|&x| self.bit_posterior(x))
                        .collect(),
                    _ => vec![0.5; n],
                }
            }
            BitClass::Unique2 => {
                let n = cfg.bits_unique_2;
                match self.ledger.range(Modality::Textual, BitClass::Unique2) {
                    Some(r) if view.sees(Modality::Textual) => self.textual.row(item)
                        [r.start..r.end]
                        .iter()
                        .map(|&x| self.bit_posterior(x))
                        .collect(),
                    _ => vec![0.5; n],
                }
            }
            BitClass::Redundant => {
                let n = cfg.bits_redundant;
                let r1 = self.ledger.range(Modality::Visual, BitClass::Redundant);
                let r2 = self.ledger.range(Modality::Textual, BitClass::Redundant);
                (0..n)
                    .map(|j| {
                        let o1 = r1
                            .filter(|_| view.sees(Modality::Visual))
                            .map(|r| self.visual.row(item)[r.start + j]);
                        let o2 = r2
                            .filter(|_| view.sees(Modality::Textual))
                            .map(|r| self.textual.row(item)[r.start + j]);
                        match (o1, o2) {
                            (Some(a), Some(b)) => self.bit_posterior_two(a, b),
                            (Some(a), None) | (None, Some(a)) => self.bit_posterior(a),
                            (None, None) => 0.5,
                        }
                    })
                    .collect()
            }
            BitClass::Synergy => {
                let n = cfg.bits_synergy;
                let r1 = self.ledger.range(Modality::Visual, BitClass::Synergy);
                let r2 = self.ledger.range(Modality::Textual, BitClass::Synergy);
                (0..n)
                    .map(|j| {
                        let p1 = r1
                            .filter(|_| view.sees(Modality::Visual))
                            .map(|r| self.bit_posterior(self.visual.row(item)[r.start + j]))
                            .unwrap_or(0.5);
                        let p2 = r2
                            .filter(|_| view.sees(Modality::Textual))
                            .map(|r| self.bit_posterior(self.textual.row(item)[r.start + j]))
                            .unwrap_or(0.5);
                        // P(s1 xor s2 = 1); with either half unknown this
                        // collapses to 1/2, which is exactly why a single
                        // modality carries no synergistic information.
                        p1 * (1.0 - p2) + p2 * (1.0 - p1)
                    })
                    .collect()
            }
            BitClass::Noise => Vec::new(),
        }
    }

    /// Exact posterior P(y = 1 | observed features) for a user with the
    /// given keys.
    pub fn relevance_probability(&self, keys: &UserKeys, item: usize, view: OracleView) -> f64 {
        let cfg = &self.ledger.config;
        let mut p = 1.0;
        if cfg.bits_unique_1 > 0 {
            let probs = self.class_bit_probs(item, BitClass::Unique1, view);
            p *= majority_prob(&xor_with_key(&probs, &keys.unique1));
        }
        if cfg.bits_unique_2 > 0 {
            let probs = self.class_bit_probs(item, BitClass::Unique2, view);
            p *= majority_prob(&xor_with_key(&probs, &keys.unique2));
        }
        if cfg.bits_redundant > 0 {
            let probs = self.class_bit_probs(item, BitClass::Redundant, view);
            p *= majority_prob(&xor_with_key(&probs, &keys.redundant));
        }
        if cfg.bits_synergy > 0 {
            let probs = self.class_bit_probs(item, BitClass::Synergy, view);
            p *= majority_prob(&xor_with_key(&probs, &keys.synergy));
        }
        p
    }

    /// Relevance probabilities for every item row, ready to rank.
    pub fn score_all(&self, keys: &UserKeys, view: OracleView) -> Vec<f64> {
        (0..self.visual.rows)
            .map(|i| self.relevance_probability(keys, i, view))
            .collect()
    }

    /// Scores for a user identified by external id, if the ledger knows it.
    pub fn score_user(&self, user_external: &str, view: OracleView) -> Option<Vec<f64>> {
        self.ledger
            .user_keys
            .get(user_external)
            .map(|keys| self.score_all(keys, view))
    }
}

fn xor_with_key(bit_probs: &[f64], key: &[bool]) -> Vec<f64> {
    bit_probs
        .iter()
        .zip(key)
        .map(|(&p, &k)| if k { 1.0 - p } else { p })
        .collect()
}

/// P(strict majority of independent Bernoulli(q_j) draws are 1), by
/// dynamic programming over the popcount distribution.
pub fn majority_prob(qs: &[f64]) -> f64 {
    let n = qs.len();
    let mut dist = vec![0.0; n + 1];
    dist[0] = 1.0;
    for (j, &q) in qs.iter().enumerate() {
        for k in (0..=j + 1).rev() {
            let stay = if k <= j { dist[k] * (1.0 - q) } else { 0.0 };
            let up = if k > 0 { dist[k - 1] * q } else { 0.0 };
            dist[k] = stay + up;
        }
    }
    (0..=n).filter(|&k| 2 * k > n).map(|k| dist[k]).sum()
}

/// Expectation of a strict-majority vote over n fair bits:
/// P(Binomial(n, 1/2) > n/2). The closed-form accuracy table in the tests
/// is built out of this.
pub fn fair_majority_prob(n: usize) -> f64 {
    if n == 0 {
        return 1.0; // disabled class: conjunct absent
    }
    majority_prob(&vec![0.5; n])
}
