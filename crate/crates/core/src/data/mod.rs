//! Dataset ingestion and preparation: interaction TSVs, 5-core filtering,
//! per-user 8:1:1 splits, negative sampling, the MMF1 binary feature
//! container, and a synthetic generator that plants ground-truth unique,
//! redundant, and synergistic bits for validation.

pub mod bayes;
mod interactions;
mod mmf;
pub mod synth;

use std::path::Path;

use crate::error::Result;
use crate::numcore::Rng;

pub use bayes::{majority_prob, BayesOracle, OracleView};
pub use interactions::{
    five_core_filter, load_interactions, parse_interactions, sample_negatives, split_811,
    InteractionDataset, RawInteraction,
};
pub use mmf::{
    load_features, read_id_map, read_matrix, sidecar_path, write_id_map, write_matrix,
    FeatureMatrix, Modality, MMF_MAGIC,
};
pub use synth::{
    synth_pid_generate, BitClass, ClassRange, GroundTruthLedger, SynthConfig, SynthOutput,
    UserKeys,
};

/// RNG sub-stream used for split shuffling, shared by the loading pipeline
/// and the synthetic generator so the same seed reproduces the same split.
pub const SPLIT_STREAM: u64 = 101;

/// The standard ingestion pipeline: parse (with dedup), 5-core filter,
/// seeded 8:1:1 split.
pub fn prepare_dataset(path: &Path, seed: u64) -> Result<InteractionDataset> {
    let raw = load_interactions(path)?;
    if raw.is_empty() {
        return Err(crate::Error::Data(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    let filtered = five_core_filter(&raw)?;
    Ok(split_811(&filtered, &mut Rng::new(seed).stream(SPLIT_STREAM)))
}
