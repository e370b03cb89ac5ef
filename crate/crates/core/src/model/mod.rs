//! The host recommender and the MRdIB representation stack: per-modality
//! variational encoders, joint and unimodal decoders over the latents, and
//! a VBPR-style latent-factor base model the plugin attaches to. Training
//! builds its own graphs in `objectives`; the scoring paths here run with
//! posterior means for deterministic evaluation.

pub mod checkpoint;

use crate::data::{FeatureMatrix, Modality};
use crate::infotheory::{DiagonalGaussian, MineNetwork};
use crate::numcore::{xavier_init, Rng, Tensor};

/// Clamp window for encoder log-variances.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Shared layer sizes. `d` is both the embedding size and the latent
/// dimension: both posteriors align to one standard-normal prior, so the
/// modalities share a single latent width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub hidden: usize,
    pub mine_hidden: usize,
    pub d_visual: usize,
    pub d_textual: usize,
}

/// Variational encoder q(z|x) for one modality: relu hidden layer, then
/// separate mean and log-variance heads of width d each.
pub struct ModalityEncoder {
    pub modality: Modality,
    w1: Tensor,
    b1: Tensor,
    w_mean: Tensor,
    b_mean: Tensor,
    w_logvar: Tensor,
    b_logvar: Tensor,
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl ModalityEncoder {
    pub fn new(
        modality: Modality,
        input_dim: usize,
        hidden: usize,
        latent_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        ModalityEncoder {
            modality,
            w1: xavier_init(rng, input_dim, hidden),
            b1: Tensor::zeros_param(&[hidden]),
            w_mean: xavier_init(rng, hidden, latent_dim),
            b_mean: Tensor::zeros_param(&[latent_dim]),
            w_logvar: xavier_init(rng, hidden, latent_dim),
            b_logvar: Tensor::zeros_param(&[latent_dim]),
            input_dim,
            hidden,
            latent_dim,
        }
    }

    /// All-zero encoder: every input maps to the prior.
    pub fn zeros(modality: Modality, input_dim: usize, hidden: usize, latent_dim: usize) -> Self {
        ModalityEncoder {
            modality,
            w1: Tensor::zeros_param(&[input_dim, hidden]),
            b1: Tensor::zeros_param(&[hidden]),
            w_mean: Tensor::zeros_param(&[hidden, latent_dim]),
            b_mean: Tensor::zeros_param(&[latent_dim]),
            w_logvar: Tensor::zeros_param(&[hidden, latent_dim]),
            b_logvar: Tensor::zeros_param(&[latent_dim]),
            input_dim,
            hidden,
            latent_dim,
        }
    }

    /// [B, input_dim] -> posterior with [B, d] mean and log-variance, the
    /// latter clamped to [LOGVAR_MIN, LOGVAR_MAX].
    pub fn encode(&self, x: &Tensor) -> DiagonalGaussian {
        assert_eq!(
            x.shape()[1],
            self.input_dim,
            "encoder input dim mismatch (contract violation)"
        );
        let h = x.matmul(&self.w1).add_row(&self.b1).relu();
        let mean = h.matmul(&self.w_mean).add_row(&self.b_mean);
        let logvar = h
            .matmul(&self.w_logvar)
            .add_row(&self.b_logvar)
            .clamp(LOGVAR_MIN, LOGVAR_MAX);
        DiagonalGaussian::new(mean, logvar)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w_mean.clone(),
            self.b_mean.clone(),
            self.w_logvar.clone(),
            self.b_logvar.clone(),
        ]
    }

    /// Rebuilds an encoder from stored weights, in `params()` order.
    pub fn from_weights(
        modality: Modality,
        input_dim: usize,
        hidden: usize,
        latent_dim: usize,
        mut weights: Vec<Tensor>,
    ) -> Self {
        assert_eq!(weights.len(), 6, "ModalityEncoder needs 6 weight tensors");
        let b_logvar = weights.pop().unwrap();
        let w_logvar = weights.pop().unwrap();
        let b_mean = weights.pop().unwrap();
        let w_mean = weights.pop().unwrap();
        let b1 = weights.pop().unwrap();
        let w1 = weights.pop().unwrap();
        assert_eq!(w1.shape(), vec![input_dim, hidden]);
        assert_eq!(w_mean.shape(), vec![hidden, latent_dim]);
        ModalityEncoder {
            modality,
            w1,
            b1,
            w_mean,
            b_mean,
            w_logvar,
            b_logvar,
            input_dim,
            hidden,
            latent_dim,
        }
    }
}

/// Which latents a decoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderArity {
    Joint,
    Unimodal1,
    Unimodal2,
}

/// Decoder p(y|z): maps latents to an item-side representation of width d
/// that gets scored against the user embedding. One relu hidden layer --
/// synergistic signal like an XOR across modalities is invisible to any
/// purely linear map of the fused latent, so the joint decoder needs the
/// nonlinearity to have a chance at it.
pub struct Decoder {
    pub arity: DecoderArity,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl Decoder {
    pub fn new(
        arity: DecoderArity,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        Decoder {
            arity,
            w1: xavier_init(rng, input_dim, hidden),
            b1: Tensor::zeros_param(&[hidden]),
            w2: xavier_init(rng, hidden, output_dim),
            b2: Tensor::zeros_param(&[output_dim]),
            input_dim,
            hidden,
            output_dim,
        }
    }

    /// [B, input_dim] -> [B, d].
    pub fn decode(&self, z: &Tensor) -> Tensor {
        assert_eq!(
            z.shape()[1],
            self.input_dim,
            "decoder input dim mismatch (contract violation)"
        );
        z.matmul(&self.w1)
            .add_row(&self.b1)
            .relu()
            .matmul(&self.w2)
            .add_row(&self.b2)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
        ]
    }

    /// Rebuilds a decoder from stored weights, in `params()` order.
    pub fn from_weights(
        arity: DecoderArity,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        mut weights: Vec<Tensor>,
    ) -> Self {
        assert_eq!(weights.len(), 4, "Decoder needs 4 weight tensors");
        let b2 = weights.pop().unwrap();
        let w2 = weights.pop().unwrap();
        let b1 = weights.pop().unwrap();
        let w1 = weights.pop().unwrap();
        assert_eq!(w1.shape(), vec![input_dim, hidden]);
        assert_eq!(w2.shape(), vec![hidden, output_dim]);
        Decoder {
            arity,
            w1,
            b1,
            w2,
            b2,
            input_dim,
            hidden,
            output_dim,
        }
    }
}

/// Fusion of the two modality latents: concatenation, visual half first.
/// Injective by construction, and keeps both inputs available to the joint
/// decoder.
pub fn fuse(z1: &Tensor, z2: &Tensor) -> Tensor {
    z1.concat_cols(z2)
}

/// The MRdIB plugin parameters: two variational encoders, three decoders,
/// and the MINE statistics network for the redundancy term.
pub struct MrdibStack {
    pub encoder_visual: ModalityEncoder,
    pub encoder_textual: ModalityEncoder,
    pub decoder_joint: Decoder,
    pub decoder_uni1: Decoder,
    pub decoder_uni2: Decoder,
    pub mine: MineNetwork,
}

impl MrdibStack {
    /// Encoder/decoder parameters (what the model optimizer steps). The
    /// MINE network is excluded: it is trained by its own adversarial
    /// schedule.
    pub fn model_params(&self) -> Vec<Tensor> {
        let mut p = self.encoder_visual.params();
        p.extend(self.encoder_textual.params());
        p.extend(self.decoder_joint.params());
        p.extend(self.decoder_uni1.params());
        p.extend(self.decoder_uni2.params());
        p
    }
}

/// Scoring path selector: `Base` is the plain VBPR-style host; the other
/// modes route item-side information through the MRdIB stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    Base,
    Joint,
    Unimodal1,
    Unimodal2,
}

/// The host recommender: user/item id embeddings plus a linear projection
/// of the raw concatenated features (the base model), optionally carrying
/// the MRdIB stack.
pub struct HostModel {
    pub n_users: usize,
    pub n_items: usize,
    pub dims: ModelDims,
    pub user_embeddings: Tensor,
    pub item_embeddings: Tensor,
    pub base_projection: Tensor,
    pub stack: Option<MrdibStack>,
}

impl HostModel {
    /// Seeded construction. With `with_stack` false (host-only mode) no
    /// encoder, decoder, or statistics network is ever allocated.
    pub fn new(
        n_users: usize,
        n_items: usize,
        dims: ModelDims,
        with_stack: bool,
        rng: &Rng,
    ) -> Self {
        assert!(n_users > 0 && n_items > 0);
        let d = dims.d;
        let user_embeddings = xavier_init(&mut rng.stream(1), n_users, d);
        let item_embeddings = xavier_init(&mut rng.stream(2), n_items, d);
        let base_projection = xavier_init(&mut rng.stream(3), dims.d_visual + dims.d_textual, d);
        let stack = with_stack.then(|| MrdibStack {
            encoder_visual: ModalityEncoder::new(
                Modality::Visual,
                dims.d_visual,
                dims.hidden,
                d,
                &mut rng.stream(4),
            ),
            encoder_textual: ModalityEncoder::new(
                Modality::Textual,
                dims.d_textual,
                dims.hidden,
                d,
                &mut rng.stream(5),
            ),
            decoder_joint: Decoder::new(DecoderArity::Joint, 2 * d, dims.hidden, d, &mut rng.stream(6)),
            decoder_uni1: Decoder::new(DecoderArity::Unimodal1, d, dims.hidden, d, &mut rng.stream(7)),
            decoder_uni2: Decoder::new(DecoderArity::Unimodal2, d, dims.hidden, d, &mut rng.stream(8)),
            mine: MineNetwork::new(2 * d, dims.mine_hidden, &mut rng.stream(9)),
        });
        HostModel {
            n_users,
            n_items,
            dims,
            user_embeddings,
            item_embeddings,
            base_projection,
            stack,
        }
    }

    pub fn stack(&self) -> &MrdibStack {
        self.stack
            .as_ref()
            .expect("this scoring mode needs the MRdIB stack (contract violation)")
    }

    /// Parameters stepped by the model optimizer (everything except the
    /// MINE network).
    pub fn model_params(&self) -> Vec<Tensor> {
        let mut p = vec![
            self.user_embeddings.clone(),
            self.item_embeddings.clone(),
            self.base_projection.clone(),
        ];
        if let Some(stack) = &self.stack {
            p.extend(stack.model_params());
        }
        p
    }

    pub fn parameter_count(&self) -> usize {
        let mut count: usize = self.model_params().iter().map(Tensor::len).sum();
        if let Some(stack) = &self.stack {
            count += stack.mine.params().iter().map(Tensor::len).sum::<usize>();
        }
        count
    }

    pub fn zero_model_grads(&self) {
        for p in self.model_params() {
            p.zero_grad();
        }
    }

    /// Posterior means over the full catalog, one row per item:
    /// (mu1 [I, d], mu2 [I, d]). The deterministic latents used by
    /// evaluation and embedding export.
    pub fn item_latent_means(
        &self,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
    ) -> (Tensor, Tensor) {
        let stack = self.stack();
        let x1 = Tensor::new(&[visual.rows, visual.cols], visual.values.clone());
        let x2 = Tensor::new(&[textual.rows, textual.cols], textual.values.clone());
        let q1 = stack.encoder_visual.encode(&x1);
        let q2 = stack.encoder_textual.encode(&x2);
        (q1.mean, q2.mean)
    }

    /// Item-side representations e_i + contribution(mode) for the whole
    /// catalog, flattened [I * d]. Mean latents; no sampling noise.
    pub fn item_representations(
        &self,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
        mode: ScoreMode,
    ) -> Vec<f64> {
        assert_eq!(visual.rows, self.n_items, "feature rows != catalog size");
        assert_eq!(textual.rows, self.n_items, "feature rows != catalog size");
        let contribution = match mode {
            ScoreMode::Base => {
                let x1 = Tensor::new(&[visual.rows, visual.cols], visual.values.clone());
                let x2 = Tensor::new(&[textual.rows, textual.cols], textual.values.clone());
                fuse(&x1, &x2).matmul(&self.base_projection)
            }
            ScoreMode::Joint => {
                let (mu1, mu2) = self.item_latent_means(visual, textual);
                self.stack().decoder_joint.decode(&fuse(&mu1, &mu2))
            }
            ScoreMode::Unimodal1 => {
                let (mu1, _) = self.item_latent_means(visual, textual);
                self.stack().decoder_uni1.decode(&mu1)
            }
            ScoreMode::Unimodal2 => {
                let (_, mu2) = self.item_latent_means(visual, textual);
                self.stack().decoder_uni2.decode(&mu2)
            }
        };
        self.item_embeddings.add(&contribution).values()
    }

    /// Score of one (user, item) pair under a mode. Matches the batched
    /// path exactly: identical per-row accumulation order.
    pub fn score(
        &self,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
        user: u32,
        item: u32,
        mode: ScoreMode,
    ) -> f64 {
        assert!((user as usize) < self.n_users, "unknown user id (contract violation)");
        assert!((item as usize) < self.n_items, "unknown item id (contract violation)");
        let i = item as usize;
        let row = |m: &FeatureMatrix| {
            FeatureMatrix::new(m.modality, 1, m.cols, m.row(i).to_vec())
        };
        let visual_row = row(visual);
        let textual_row = row(textual);
        let rep = self.single_item_representation(&visual_row, &textual_row, item, mode);
        let d = self.dims.d;
        let users = self.user_embeddings.values_ref();
        let u = user as usize;
        let mut s = 0.0;
        for c in 0..d {
            s += users[u * d + c] * rep[c];
        }
        s
    }

    fn single_item_representation(
        &self,
        visual_row: &FeatureMatrix,
        textual_row: &FeatureMatrix,
        item: u32,
        mode: ScoreMode,
    ) -> Vec<f64> {
        let contribution = match mode {
            ScoreMode::Base => {
                let x1 = Tensor::new(&[1, visual_row.cols], visual_row.values.clone());
                let x2 = Tensor::new(&[1, textual_row.cols], textual_row.values.clone());
                fuse(&x1, &x2).matmul(&self.base_projection)
            }
            ScoreMode::Joint => {
                let (mu1, mu2) = self.encode_rows(visual_row, textual_row);
                self.stack().decoder_joint.decode(&fuse(&mu1, &mu2))
            }
            ScoreMode::Unimodal1 => {
                let (mu1, _) = self.encode_rows(visual_row, textual_row);
                self.stack().decoder_uni1.decode(&mu1)
            }
            ScoreMode::Unimodal2 => {
                let (_, mu2) = self.encode_rows(visual_row, textual_row);
                self.stack().decoder_uni2.decode(&mu2)
            }
        };
        let item_row = self.item_embeddings.index_select(&[item as usize]);
        item_row.add(&contribution).values()
    }

    fn encode_rows(&self, visual: &FeatureMatrix, textual: &FeatureMatrix) -> (Tensor, Tensor) {
        let stack = self.stack();
        let x1 = Tensor::new(&[visual.rows, visual.cols], visual.values.clone());
        let x2 = Tensor::new(&[textual.rows, textual.cols], textual.values.clone());
        (
            stack.encoder_visual.encode(&x1).mean,
            stack.encoder_textual.encode(&x2).mean,
        )
    }

    /// Lazily-scorable user -> catalog view with the item side
    /// precomputed once.
    pub fn score_view(
        &self,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
        mode: ScoreMode,
    ) -> ScoreMatrixView {
        ScoreMatrixView {
            d: self.dims.d,
            n_items: self.n_items,
            user_embeddings: self.user_embeddings.values(),
            item_reps: self.item_representations(visual, textual, mode),
        }
    }
}

/// User -> item score rows over a fixed item-side representation table.
/// Rows are computed on demand; masking is applied by the evaluation layer
/// (masked entries become -inf and can never rank).
pub struct ScoreMatrixView {
    pub d: usize,
    pub n_items: usize,
    user_embeddings: Vec<f64>,
    item_reps: Vec<f64>,
}

impl ScoreMatrixView {
    pub fn row(&self, user: u32) -> Vec<f64> {
        let d = self.d;
        let u = &self.user_embeddings[user as usize * d..(user as usize + 1) * d];
        (0..self.n_items)
            .map(|i| {
                let rep = &self.item_reps[i * d..(i + 1) * d];
                let mut s = 0.0;
                for c in 0..d {
                    s += u[c] * rep[c];
                }
                s
            })
            .collect()
    }

    pub fn masked_row(&self, user: u32, masked_sorted: &[u32]) -> Vec<f64> {
        let mut row = self.row(user);
        for &i in masked_sorted {
            row[i as usize] = f64::NEG_INFINITY;
        }
        row
    }
}

/// Full-model evaluation of a split: mean-latent scores, train masking
/// (plus validation masking at test time), top-k metrics.
pub fn evaluate_model(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    dataset: &crate::data::InteractionDataset,
    split: crate::eval::Split,
    mode: ScoreMode,
    k: usize,
) -> crate::eval::MetricsReport {
    let view = host.score_view(visual, textual, mode);
    crate::eval::evaluate_scores(dataset, split, k, |u| view.row(u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(d_visual: usize, d_textual: usize) -> ModelDims {
        ModelDims {
            d: 8,
            hidden: 16,
            mine_hidden: 8,
            d_visual,
            d_textual,
        }
    }

    fn toy_features(n_items: usize, cols: usize, modality: Modality, seed: u64) -> FeatureMatrix {
        let mut rng = Rng::new(seed);
        let values = (0..n_items * cols).map(|_| rng.normal()).collect();
        FeatureMatrix::new(modality, n_items, cols, values)
    }

    #[test]
    fn zero_weight_encoder_maps_to_prior() {
        let enc = ModalityEncoder::zeros(Modality::Visual, 5, 7, 4);
        let x = Tensor::new(&[3, 5], vec![1.0; 15]);
        let q = enc.encode(&x);
        assert!(q.mean.values().iter().all(|&v| v == 0.0));
        assert!(q.log_variance.values().iter().all(|&v| v == 0.0));
        assert_eq!(q.kl_to_standard().item(), 0.0);
    }

    #[test]
    fn encoder_output_is_clamped_and_pure() {
        let mut rng = Rng::new(3);
        let enc = ModalityEncoder::new(Modality::Textual, 6, 12, 4, &mut rng);
        let x = Tensor::new(&[2, 6], vec![100.0, -50.0, 3.0, 0.0, 7.0, -2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let q1 = enc.encode(&x);
        let q2 = enc.encode(&x);
        assert_eq!(q1.mean.values(), q2.mean.values());
        for v in q1.log_variance.values() {
            assert!((LOGVAR_MIN..=LOGVAR_MAX).contains(&v));
        }
        assert_eq!(q1.mean.shape(), vec![2, 4]);
        assert_eq!(q1.log_variance.shape(), vec![2, 4]);
    }

    #[test]
    fn fuse_keeps_order_and_is_injective_on_distinct_inputs() {
        let z1 = Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]);
        let z2 = Tensor::new(&[1, 3], vec![0.0, 1.0, 0.0]);
        let f = fuse(&z1, &z2);
        assert_eq!(f.values(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let g = fuse(&z2, &z1);
        assert_ne!(f.values(), g.values());
        let zero = fuse(
            &Tensor::zeros(&[1, 3]),
            &Tensor::zeros(&[1, 3]),
        );
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_item_score_matches_batched_score_all() {
        let rng = Rng::new(11);
        let host = HostModel::new(4, 6, dims(5, 3), true, &rng);
        let visual = toy_features(6, 5, Modality::Visual, 21);
        let textual = toy_features(6, 3, Modality::Textual, 22);
        for mode in [
            ScoreMode::Base,
            ScoreMode::Joint,
            ScoreMode::Unimodal1,
            ScoreMode::Unimodal2,
        ] {
            let view = host.score_view(&visual, &textual, mode);
            for u in 0..4u32 {
                let row = view.row(u);
                for i in 0..6u32 {
                    let s = host.score(&visual, &textual, u, i, mode);
                    assert!(
                        (s - row[i as usize]).abs() < 1e-12,
                        "mode {mode:?} u{u} i{i}: {s} vs {}",
                        row[i as usize]
                    );
                }
            }
        }
    }

    #[test]
    fn all_zero_user_embedding_scores_zero_everywhere() {
        let rng = Rng::new(13);
        let host = HostModel::new(2, 5, dims(4, 4), true, &rng);
        host.user_embeddings.set_values(&vec![0.0; 2 * 8]);
        let visual = toy_features(5, 4, Modality::Visual, 31);
        let textual = toy_features(5, 4, Modality::Textual, 32);
        let view = host.score_view(&visual, &textual, ScoreMode::Joint);
        assert!(view.row(0).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn masked_entries_become_neg_infinity() {
        let rng = Rng::new(17);
        let host = HostModel::new(2, 4, dims(3, 3), false, &rng);
        let visual = toy_features(4, 3, Modality::Visual, 41);
        let textual = toy_features(4, 3, Modality::Textual, 42);
        let view = host.score_view(&visual, &textual, ScoreMode::Base);
        let row = view.masked_row(0, &[1, 3]);
        assert_eq!(row[1], f64::NEG_INFINITY);
        assert_eq!(row[3], f64::NEG_INFINITY);
        assert!(row[0].is_finite() && row[2].is_finite());
    }

    #[test]
    fn host_only_never_allocates_the_stack() {
        let rng = Rng::new(19);
        let bare = HostModel::new(10, 20, dims(6, 7), false, &rng);
        assert!(bare.stack.is_none());
        let full = HostModel::new(10, 20, dims(6, 7), true, &rng);
        assert!(full.parameter_count() > bare.parameter_count());
    }

    #[test]
    fn joint_score_is_sensitive_to_both_latents() {
        // finite-difference sensitivity of the joint score to each
        // modality's features must be nonzero for a random model
        let rng = Rng::new(23);
        let host = HostModel::new(2, 3, dims(4, 4), true, &rng);
        let visual = toy_features(3, 4, Modality::Visual, 51);
        let textual = toy_features(3, 4, Modality::Textual, 52);
        let base = host.score(&visual, &textual, 0, 1, ScoreMode::Joint);
        let mut v2 = visual.clone();
        v2.values[4] += 0.1; // item 1, dim 0
        let with_v = host.score(&v2, &textual, 0, 1, ScoreMode::Joint);
        let mut t2 = textual.clone();
        t2.values[4] += 0.1;
        let with_t = host.score(&visual, &t2, 0, 1, ScoreMode::Joint);
        assert!((with_v - base).abs() > 1e-9, "insensitive to visual");
        assert!((with_t - base).abs() > 1e-9, "insensitive to textual");
    }
}
