//! The four MRdIB loss terms and their weighted composition, the
//! sampled-softmax likelihood behind every -log p(y|.) term, and the
//! alternating min-max schedule for the MINE statistics network.
//!
//! Zeroing a weight removes that term from the computational graph
//! entirely (ablation semantics): no gradients, no extra randomness. Each
//! noise source draws from its own seeded stream, so turning one term off
//! leaves the draws of the others bit-identical.

mod train;

pub use train::{train_epoch, EpochStats, TrainerConfig};

use crate::data::{sample_negatives, FeatureMatrix, InteractionDataset};
use crate::error::Result;
use crate::infotheory::{dv_bound, mine_ascent_step, EmaDenominator, SampleMode};
use crate::model::{fuse, HostModel};
use crate::numcore::{Adam, Rng, Tensor};

/// Coefficients of the combined objective plus the statistics-network
/// update schedule. A weight of exactly 0 removes its term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub mine_steps_per_model_step: usize,
}

impl LossWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Self {
        assert!(
            alpha1 >= 0.0 && alpha2 >= 0.0 && alpha3 >= 0.0,
            "loss weights must be non-negative"
        );
        LossWeights {
            alpha1,
            alpha2,
            alpha3,
            mine_steps_per_model_step: 1,
        }
    }

    pub fn zeros() -> Self {
        LossWeights::new(0.0, 0.0, 0.0)
    }

    pub fn with_mine_steps(mut self, steps: usize) -> Self {
        assert!(steps >= 1, "mine_steps_per_model_step must be positive");
        self.mine_steps_per_model_step = steps;
        self
    }
}

/// Per-term values (nats) of one loss evaluation. `total` reconstructs
/// exactly as nll_joint + a1*kl_sum + a2*redundancy + a3*nll_unimodal_sum;
/// terms removed by a zero weight report 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub nll_joint: f64,
    pub kl_sum: f64,
    pub redundancy: f64,
    pub nll_unimodal_sum: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.nll_joint += other.nll_joint;
        self.kl_sum += other.kl_sum;
        self.redundancy += other.redundancy;
        self.nll_unimodal_sum += other.nll_unimodal_sum;
        self.total += other.total;
    }

    pub fn scale(&mut self, c: f64) {
        self.nll_joint *= c;
        self.kl_sum *= c;
        self.redundancy *= c;
        self.nll_unimodal_sum *= c;
        self.total *= c;
    }

    /// Names the first non-finite component, if any (for NaN aborts).
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            (self.nll_joint, "nll_joint"),
            (self.kl_sum, "kl_sum"),
            (self.redundancy, "redundancy"),
            (self.nll_unimodal_sum, "nll_unimodal_sum"),
            (self.total, "total"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }
}

/// One minibatch of positive instances with their sampled negatives:
/// per positive (u, i+), K item ids i- outside u's training positives.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub users: Vec<u32>,
    pub pos_items: Vec<u32>,
    /// Flattened [b * k]: negatives for positive j at j*k..(j+1)*k.
    pub negatives: Vec<u32>,
    pub k: usize,
}

impl TrainBatch {
    pub fn sample(
        dataset: &InteractionDataset,
        pairs: &[(u32, u32)],
        k: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(!pairs.is_empty(), "empty batch (contract violation)");
        assert!(k >= 1, "need at least one negative");
        let mut users = Vec::with_capacity(pairs.len());
        let mut pos_items = Vec::with_capacity(pairs.len());
        let mut negatives = Vec::with_capacity(pairs.len() * k);
        for &(u, i) in pairs {
            users.push(u);
            pos_items.push(i);
            negatives.extend(sample_negatives(dataset, u, k, rng));
        }
        TrainBatch {
            users,
            pos_items,
            negatives,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Row layout used by every scoring head: for each positive j, the
    /// positive item at row j*(1+k), its negatives right after.
    fn item_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.len() * (1 + self.k));
        for j in 0..self.len() {
            rows.push(self.pos_items[j] as usize);
            for n in 0..self.k {
                rows.push(self.negatives[j * self.k + n] as usize);
            }
        }
        rows
    }

    fn user_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.len() * (1 + self.k));
        for &u in &self.users {
            for _ in 0..=self.k {
                rows.push(u as usize);
            }
        }
        rows
    }

    fn positive_row_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|j| j * (1 + self.k)).collect()
    }
}

/// -ln( e^{s+} / (e^{s+} + sum_j e^{s-_j}) ) for a single score vector
/// [s+, s-_1 .. s-_K], via logsumexp.
pub fn sampled_softmax_nll(scores: &Tensor) -> Tensor {
    let n = scores.len();
    assert!(n >= 2, "sampled softmax needs at least one negative");
    sampled_softmax_nll_rows(&scores.reshape(&[1, n]))
}

/// Mean sampled-softmax NLL over rows of [B, 1+K] scores, positives in
/// column 0.
pub fn sampled_softmax_nll_rows(scores: &Tensor) -> Tensor {
    let shape = scores.shape();
    assert_eq!(shape.len(), 2, "expected [batch, 1+K] scores");
    let (b, n) = (shape[0], shape[1]);
    assert!(n >= 2, "sampled softmax needs at least one negative");
    let mut mask = vec![0.0; b * n];
    for j in 0..b {
        mask[j * n] = 1.0;
    }
    let s_plus = scores.mul(&Tensor::new(&[b, n], mask)).row_sum();
    scores.row_logsumexp().sub(&s_plus).mean()
}

/// Shared forward pass of one batch through the representation stack.
/// Built once and reused by every term so all of them see the same
/// reparameterization draws.
pub(crate) struct BatchGraph {
    pub user_rows: Tensor,
    pub item_rows: Tensor,
    pub q1: crate::infotheory::DiagonalGaussian,
    pub q2: crate::infotheory::DiagonalGaussian,
    pub z1: Tensor,
    pub z2: Tensor,
    pub b: usize,
    pub k: usize,
    pub pos_indices: Vec<usize>,
}

impl BatchGraph {
    pub(crate) fn build(
        host: &HostModel,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
        batch: &TrainBatch,
        eps_rng: &mut Rng,
        mode: SampleMode,
    ) -> Self {
        assert!(!batch.is_empty(), "empty batch (contract violation)");
        let stack = host.stack();
        let items = batch.item_rows();
        let users = batch.user_rows();
        let rows = items.len();

        let user_rows = host.user_embeddings.index_select(&users);
        let item_rows = host.item_embeddings.index_select(&items);

        let item_u32: Vec<u32> = items.iter().map(|&i| i as u32).collect();
        let x1 = Tensor::new(&[rows, visual.cols], visual.gather(&item_u32));
        let x2 = Tensor::new(&[rows, textual.cols], textual.gather(&item_u32));

        let q1 = stack.encoder_visual.encode(&x1);
        let q2 = stack.encoder_textual.encode(&x2);
        let z1 = q1.reparameterize(eps_rng, mode).z;
        let z2 = q2.reparameterize(eps_rng, mode).z;

        BatchGraph {
            user_rows,
            item_rows,
            q1,
            q2,
            z1,
            z2,
            b: batch.len(),
            k: batch.k,
            pos_indices: batch.positive_row_indices(),
        }
    }

    /// Scores [B, 1+K] for a decoder head over the given latent input.
    fn head_scores(&self, decoded: &Tensor) -> Tensor {
        let reps = self.item_rows.add(decoded);
        self.user_rows
            .mul(&reps)
            .row_sum()
            .reshape(&[self.b, 1 + self.k])
    }

    pub(crate) fn joint_nll(&self, host: &HostModel) -> Tensor {
        let decoded = host.stack().decoder_joint.decode(&fuse(&self.z1, &self.z2));
        sampled_softmax_nll_rows(&self.head_scores(&decoded))
    }

    pub(crate) fn unimodal_nll_sum(&self, host: &HostModel) -> Tensor {
        let stack = host.stack();
        let nll1 = sampled_softmax_nll_rows(&self.head_scores(&stack.decoder_uni1.decode(&self.z1)));
        let nll2 = sampled_softmax_nll_rows(&self.head_scores(&stack.decoder_uni2.decode(&self.z2)));
        nll1.add(&nll2)
    }

    /// Mean over the batch's positive instances of
    /// KL(q(z1|x1) || N(0,I)) + KL(q(z2|x2) || N(0,I)).
    pub(crate) fn kl_mean_sum(&self) -> Tensor {
        let kl1 = self.q1.select_rows(&self.pos_indices).kl_to_standard();
        let kl2 = self.q2.select_rows(&self.pos_indices).kl_to_standard();
        kl1.add(&kl2).scale(1.0 / self.b as f64)
    }

    /// DV bound on I(Z1; Z2) over the batch's positive-instance latents;
    /// marginals come from an in-batch permutation of z2.
    pub(crate) fn redundancy(&self, host: &HostModel, perm_rng: &mut Rng) -> Tensor {
        assert!(
            self.b >= 2,
            "redundancy needs a batch of at least 2 (contract violation)"
        );
        let z1p = self.z1.index_select(&self.pos_indices);
        let z2p = self.z2.index_select(&self.pos_indices);
        let perm = perm_rng.permutation(self.b);
        let joint = fuse(&z1p, &z2p);
        let marginal = fuse(&z1p, &z2p.index_select(&perm));
        dv_bound(&host.stack().mine, &joint, &marginal)
    }

    /// Base-model scores (VBPR path): dot(e_u, e_i + W [x1; x2]).
    pub(crate) fn base_nll(
        host: &HostModel,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
        batch: &TrainBatch,
    ) -> Tensor {
        let items = batch.item_rows();
        let users = batch.user_rows();
        let rows = items.len();
        let item_u32: Vec<u32> = items.iter().map(|&i| i as u32).collect();
        let x1 = Tensor::new(&[rows, visual.cols], visual.gather(&item_u32));
        let x2 = Tensor::new(&[rows, textual.cols], textual.gather(&item_u32));
        let decoded = fuse(&x1, &x2).matmul(&host.base_projection);
        let reps = host.item_embeddings.index_select(&items).add(&decoded);
        let scores = host
            .user_embeddings
            .index_select(&users)
            .mul(&reps)
            .row_sum()
            .reshape(&[batch.len(), 1 + batch.k]);
        sampled_softmax_nll_rows(&scores)
    }
}

/// MIB terms of Eq.-3 shape: (joint reconstruction NLL, mean posterior KL
/// to the prior). Differentiable tensors; weighting is the caller's.
pub fn mib_loss(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    batch: &TrainBatch,
    rng: &mut Rng,
) -> (Tensor, Tensor) {
    let g = BatchGraph::build(host, visual, textual, batch, rng, SampleMode::Sample);
    (g.joint_nll(host), g.kl_mean_sum())
}

/// Unique-information objective: each unimodal decoder predicts the target
/// from its own latent alone; returns the sum of the two NLLs.
pub fn unique_loss(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    batch: &TrainBatch,
    rng: &mut Rng,
) -> Tensor {
    let g = BatchGraph::build(host, visual, textual, batch, rng, SampleMode::Sample);
    g.unimodal_nll_sum(host)
}

/// Redundancy objective: the DV bound on I(Z1; Z2) evaluated on the
/// batch's latents. Descending it (w.r.t. encoder parameters) pushes the
/// representations toward independence; the statistics network itself is
/// only ever updated through `mine_update`.
pub fn redundancy_loss(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    batch: &TrainBatch,
    rng: &mut Rng,
) -> Tensor {
    let g = BatchGraph::build(host, visual, textual, batch, rng, SampleMode::Sample);
    g.redundancy(host, rng)
}

/// Optimizer state for the statistics network: its own Adam plus the EMA
/// denominator for the log-partition gradient.
pub struct MineTrainer {
    pub adam: Adam,
    ema: EmaDenominator,
}

impl MineTrainer {
    pub fn new(lr: f64) -> Self {
        MineTrainer {
            adam: Adam::new(lr),
            ema: EmaDenominator::new(0.99),
        }
    }
}

/// One ascent step of the statistics network on this batch's latents. The
/// latents are materialized as plain values first, so encoder and decoder
/// parameters cannot receive gradients here; conversely the model step
/// never touches f. Returns the DV bound estimate.
pub fn mine_update(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    batch: &TrainBatch,
    trainer: &mut MineTrainer,
    rng: &mut Rng,
) -> Result<f64> {
    assert!(batch.len() >= 2, "mine_update needs a batch of at least 2");
    let g = BatchGraph::build(host, visual, textual, batch, rng, SampleMode::Sample);
    let z1 = g.z1.index_select(&g.pos_indices).values();
    let z2 = g.z2.index_select(&g.pos_indices).values();
    let d = host.dims.d;
    mine_ascent_step(
        &host.stack().mine,
        &z1,
        &z2,
        g.b,
        d,
        d,
        &mut trainer.ema,
        &mut trainer.adam,
        rng,
    )
}

/// The combined objective with its per-term breakdown. Terms with a zero
/// weight are not built at all: their parameters see no gradient and their
/// breakdown entry is 0.
pub struct MrdibLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

/// Assembles total = nll_joint + a1 * kl_sum + a2 * redundancy
/// + a3 * nll_unimodal_sum on one shared forward pass (single
/// reparameterization draw per instance). For a stack-less host the joint
/// head is the base scoring path and only the NLL term exists.
pub fn mrdib_total(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    batch: &TrainBatch,
    weights: &LossWeights,
    eps_rng: &mut Rng,
    perm_rng: &mut Rng,
) -> MrdibLoss {
    if host.stack.is_none() {
        let nll = BatchGraph::base_nll(host, visual, textual, batch);
        let value = nll.item();
        return MrdibLoss {
            total: nll,
            breakdown: LossBreakdown {
                nll_joint: value,
                total: value,
                ..Default::default()
            },
        };
    }

    let g = BatchGraph::build(host, visual, textual, batch, eps_rng, SampleMode::Sample);
    let nll_joint = g.joint_nll(host);
    let mut breakdown = LossBreakdown {
        nll_joint: nll_joint.item(),
        ..Default::default()
    };
    let mut total = nll_joint;
    if weights.alpha1 > 0.0 {
        let kl = g.kl_mean_sum();
        breakdown.kl_sum = kl.item();
        total = total.add(&kl.scale(weights.alpha1));
    }
    if weights.alpha2 > 0.0 && g.b >= 2 {
        let red = g.redundancy(host, perm_rng);
        breakdown.redundancy = red.item();
        total = total.add(&red.scale(weights.alpha2));
    }
    if weights.alpha3 > 0.0 {
        let uni = g.unimodal_nll_sum(host);
        breakdown.nll_unimodal_sum = uni.item();
        total = total.add(&uni.scale(weights.alpha3));
    }
    breakdown.total = total.item();
    MrdibLoss { total, breakdown }
}
