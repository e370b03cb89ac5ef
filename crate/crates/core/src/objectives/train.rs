use crate::data::{FeatureMatrix, InteractionDataset};
use crate::error::{Error, Result};
use crate::model::HostModel;
use crate::numcore::{Adam, Rng};

use super::{mine_update, mrdib_total, LossBreakdown, LossWeights, MineTrainer, TrainBatch};

/// Minibatch geometry for the epoch loop.
#[derive(Clone, Copy, Debug)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub k_negatives: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            batch_size: 2048,
            k_negatives: 4,
        }
    }
}

/// Mean loss components over one epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub mean: LossBreakdown,
    pub n_batches: usize,
    /// Mean DV bound across the epoch's statistics-network updates, if any
    /// ran.
    pub mine_bound_mean: Option<f64>,
}

// Purpose tags for the per-epoch RNG streams. Re-deriving every stream
// from (purpose, epoch) keeps each noise source independent of the others:
// disabling a term never shifts the draws the remaining terms see.
const STREAM_SHUFFLE: u64 = 0x21;
const STREAM_NEGATIVES: u64 = 0x22;
const STREAM_EPS: u64 = 0x23;
const STREAM_PERM: u64 = 0x24;
const STREAM_MINE: u64 = 0x25;

fn epoch_stream(base: &Rng, purpose: u64, epoch: u64) -> Rng {
    base.stream((purpose << 40) | epoch)
}

/// One pass over the training split: shuffled minibatches; per batch,
/// `mine_steps_per_model_step` statistics-network updates (when the
/// redundancy term is active), then one backward/Adam step on the model
/// parameters. Aborts with the offending component named if the loss goes
/// non-finite.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    host: &HostModel,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
    dataset: &InteractionDataset,
    weights: &LossWeights,
    adam_model: &mut Adam,
    mine_trainer: &mut MineTrainer,
    cfg: &TrainerConfig,
    base_rng: &Rng,
    epoch: u64,
) -> Result<EpochStats> {
    let mut pairs = dataset.train_pairs();
    assert!(!pairs.is_empty(), "empty training split (contract violation)");
    epoch_stream(base_rng, STREAM_SHUFFLE, epoch).shuffle(&mut pairs);

    let mut neg_rng = epoch_stream(base_rng, STREAM_NEGATIVES, epoch);
    let mut eps_rng = epoch_stream(base_rng, STREAM_EPS, epoch);
    let mut perm_rng = epoch_stream(base_rng, STREAM_PERM, epoch);
    let mut mine_rng = epoch_stream(base_rng, STREAM_MINE, epoch);

    let model_params = host.model_params();
    let param_refs: Vec<&crate::numcore::Tensor> = model_params.iter().collect();

    let mut sum = LossBreakdown::default();
    let mut n_batches = 0usize;
    let mut mine_bounds: Vec<f64> = Vec::new();

    for chunk in pairs.chunks(cfg.batch_size.max(1)) {
        let batch = TrainBatch::sample(dataset, chunk, cfg.k_negatives, &mut neg_rng);

        let mine_active = host.stack.is_some() && weights.alpha2 > 0.0 && batch.len() >= 2;
        if mine_active {
            for _ in 0..weights.mine_steps_per_model_step {
                let bound =
                    mine_update(host, visual, textual, &batch, mine_trainer, &mut mine_rng)?;
                mine_bounds.push(bound);
            }
        }

        let loss = mrdib_total(
            host,
            visual,
            textual,
            &batch,
            weights,
            &mut eps_rng,
            &mut perm_rng,
        );
        if let Some(component) = loss.breakdown.non_finite_component() {
            return Err(Error::Numerical(format!(
                "loss component {component} went non-finite at epoch {epoch}, batch {n_batches}"
            )));
        }
        host.zero_model_grads();
        loss.total.backward()?;
        adam_model.step(&param_refs);

        sum.add(&loss.breakdown);
        n_batches += 1;
    }

    let mut mean = sum;
    mean.scale(1.0 / n_batches as f64);
    Ok(EpochStats {
        mean,
        n_batches,
        mine_bound_mean: if mine_bounds.is_empty() {
            None
        } else {
            Some(mine_bounds.iter().sum::<f64>() / mine_bounds.len() as f64)
        },
    })
}
