use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::Rng;

use super::interactions::{five_core_filter, split_811, InteractionDataset, RawInteraction};
use super::mmf::{FeatureMatrix, Modality};
use super::SPLIT_STREAM;

const ITEM_BITS_STREAM: u64 = 110;
const USER_KEYS_STREAM: u64 = 111;
const NOISE_X1_STREAM: u64 = 112;
const NOISE_X2_STREAM: u64 = 113;

/// Configuration for the synthetic generator. Each "bits" field plants
/// that many independent fair bits of the given information class in the
/// item features; at least one class must be non-zero.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    #[serde(default)]
    pub bits_unique_1: usize,
    #[serde(default)]
    pub bits_unique_2: usize,
    #[serde(default)]
    pub bits_redundant: usize,
    #[serde(default)]
    pub bits_synergy: usize,
    #[serde(default)]
    pub noise_dims: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn total_info_bits(&self) -> usize {
        self.bits_unique_1 + self.bits_unique_2 + self.bits_redundant + self.bits_synergy
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.total_info_bits() == 0 {
            return Err(crate::Error::Config(
                "synthetic config must enable at least one information-bit class".to_string(),
            ));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return Err(crate::Error::Config(
                "synthetic config needs n_users > 0 and n_items > 0".to_string(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(crate::Error::Config("noise_sigma must be >= 0".to_string()));
        }
        Ok(())
    }

    /// Feature dimensionality of modality 1 (unique1, redundant, synergy
    /// half, then noise).
    pub fn d1(&self) -> usize {
        self.bits_unique_1 + self.bits_redundant + self.bits_synergy + self.noise_dims
    }

    pub fn d2(&self) -> usize {
        self.bits_unique_2 + self.bits_redundant + self.bits_synergy + self.noise_dims
    }
}

/// Which information class a feature-dimension range carries.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BitClass {
    Unique1,
    Unique2,
    Redundant,
    Synergy,
    Noise,
}

/// Half-open dimension range [start, end) tagged with its class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClassRange {
    pub class: BitClass,
    pub start: usize,
    pub end: usize,
}

/// The per-user archetype: one key bit per planted bit (per pair, for
/// synergy). A user finds an item relevant when, class by class, the
/// majority of the item's bits XOR the key comes out 1.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct UserKeys {
    pub unique1: Vec<bool>,
    pub unique2: Vec<bool>,
    pub redundant: Vec<bool>,
    pub synergy: Vec<bool>,
}

/// Ground truth emitted alongside generated data: which dimensions carry
/// which class, plus each surviving user's keys (what an oracle needs to
/// reconstruct relevance from features alone).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroundTruthLedger {
    pub config: SynthConfig,
    pub x1_ranges: Vec<ClassRange>,
    pub x2_ranges: Vec<ClassRange>,
    pub user_keys: BTreeMap<String, UserKeys>,
}

impl GroundTruthLedger {
    pub fn range(&self, modality: Modality, class: BitClass) -> Option<&ClassRange> {
        let ranges = match modality {
            Modality::Visual => &self.x1_ranges,
            Modality::Textual => &self.x2_ranges,
        };
        ranges.iter().find(|r| r.class == class)
    }
}

/// Everything the generator produces. `dataset` is the 5-core-filtered,
/// split view of `interactions`; the `*_full` matrices cover all generated
/// items in original order (what gets written to disk), while
/// `aligned_features` gives the rows reindexed to the dataset vocabulary.
pub struct SynthOutput {
    pub interactions: Vec<RawInteraction>,
    pub dataset: InteractionDataset,
    pub ledger: GroundTruthLedger,
    pub item_ids: Vec<String>,
    pub visual_full: Vec<f32>,
    pub textual_full: Vec<f32>,
    /// relevance[u * n_items + i] = true label y(u, i), original indices.
    pub relevance: Vec<bool>,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i:05}")
}

fn ranges_for(cfg: &SynthConfig, first_unique: BitClass, n_unique: usize) -> Vec<ClassRange> {
    let mut out = Vec::new();
    let mut cursor = 0;
    let mut push = |class: BitClass, len: usize, cursor: &mut usize| {
        if len > 0 {
            out.push(ClassRange {
                class,
                start: *cursor,
                end: *cursor + len,
            });
            *cursor += len;
        }
    };
    push(first_unique, n_unique, &mut cursor);
    push(BitClass::Redundant, cfg.bits_redundant, &mut cursor);
    push(BitClass::Synergy, cfg.bits_synergy, &mut cursor);
    push(BitClass::Noise, cfg.noise_dims, &mut cursor);
    out
}

/// Strict majority of ones among `bits ^ key` (ties vote 0).
fn majority_vote(bits: &[bool], key: &[bool]) -> bool {
    let ones = bits.iter().zip(key).filter(|(b, k)| *b != *k).count();
    2 * ones > bits.len()
}

struct ItemBits {
    unique1: Vec<bool>,
    unique2: Vec<bool>,
    redundant: Vec<bool>,
    synergy1: Vec<bool>,
    synergy2: Vec<bool>,
}

/// Generates a dataset whose relevance signal decomposes, by
/// construction, into unique, redundant, and synergistic parts:
///
/// - unique1 bits appear only in x1, unique2 only in x2;
/// - redundant bits appear identically in both;
/// - each synergy pair puts one half in each modality, and only the XOR of
///   the halves predicts anything.
///
/// A user interacts with exactly the items relevant to their keys, so the
/// held-out positives are precisely the unseen relevant items. Bit codes
/// are +-1 with additive Gaussian noise (noise_sigma); pure noise
/// dimensions are standard normal.
pub fn synth_pid_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()
        .unwrap_or_else(|e| panic!("invalid synthetic config: {e}"));

    let base = Rng::new(cfg.seed);
    let mut bit_rng = base.stream(ITEM_BITS_STREAM);
    let mut key_rng = base.stream(USER_KEYS_STREAM);

    let items: Vec<ItemBits> = (0..cfg.n_items)
        .map(|_| ItemBits {
            unique1: draw_bits(&mut bit_rng, cfg.bits_unique_1),
            unique2: draw_bits(&mut bit_rng, cfg.bits_unique_2),
            redundant: draw_bits(&mut bit_rng, cfg.bits_redundant),
            synergy1: draw_bits(&mut bit_rng, cfg.bits_synergy),
            synergy2: draw_bits(&mut bit_rng, cfg.bits_synergy),
        })
        .collect();

    let keys: Vec<UserKeys> = (0..cfg.n_users)
        .map(|_| UserKeys {
            unique1: draw_bits(&mut key_rng, cfg.bits_unique_1),
            unique2: draw_bits(&mut key_rng, cfg.bits_unique_2),
            redundant: draw_bits(&mut key_rng, cfg.bits_redundant),
            synergy: draw_bits(&mut key_rng, cfg.bits_synergy),
        })
        .collect();

    // Relevance labels and the interaction list (every relevant pair).
    let mut relevance = vec![false; cfg.n_users * cfg.n_items];
    let mut interactions = Vec::new();
    for (u, key) in keys.iter().enumerate() {
        for (i, bits) in items.iter().enumerate() {
            if is_relevant(cfg, bits, key) {
                relevance[u * cfg.n_items + i] = true;
                interactions.push(RawInteraction {
                    user: user_id(u),
                    item: item_id(i),
                    timestamp: None,
                });
            }
        }
    }
    if interactions.is_empty() {
        return Err(crate::Error::Data(
            "synthetic config produced no relevant pairs".to_string(),
        ));
    }

    // Feature embedding: +-1 codes with additive noise, then pure noise
    // dims. Values are rounded through f32, matching what the on-disk
    // container holds.
    let mut x1_rng = base.stream(NOISE_X1_STREAM);
    let mut x2_rng = base.stream(NOISE_X2_STREAM);
    let (d1, d2) = (cfg.d1(), cfg.d2());
    let mut visual_full = Vec::with_capacity(cfg.n_items * d1);
    let mut textual_full = Vec::with_capacity(cfg.n_items * d2);
    for bits in &items {
        embed_row(
            &mut visual_full,
            &[&bits.unique1, &bits.redundant, &bits.synergy1],
            cfg.noise_dims,
            cfg.noise_sigma,
            &mut x1_rng,
        );
        embed_row(
            &mut textual_full,
            &[&bits.unique2, &bits.redundant, &bits.synergy2],
            cfg.noise_dims,
            cfg.noise_sigma,
            &mut x2_rng,
        );
    }

    let filtered = five_core_filter(&interactions)?;
    let dataset = split_811(&filtered, &mut base.stream(SPLIT_STREAM));

    // Only surviving users make it into the ledger key map.
    let mut user_keys = BTreeMap::new();
    for (u, key) in keys.iter().enumerate() {
        let id = user_id(u);
        if dataset.user_idx(&id).is_some() {
            user_keys.insert(id, key.clone());
        }
    }

    let ledger = GroundTruthLedger {
        config: cfg.clone(),
        x1_ranges: ranges_for(cfg, BitClass::Unique1, cfg.bits_unique_1),
        x2_ranges: ranges_for(cfg, BitClass::Unique2, cfg.bits_unique_2),
        user_keys,
    };

    Ok(SynthOutput {
        interactions,
        dataset,
        ledger,
        item_ids: (0..cfg.n_items).map(item_id).collect(),
        visual_full,
        textual_full,
        relevance,
    })
}

impl SynthOutput {
    /// Full-catalog feature matrices reindexed to the dataset vocabulary
    /// (the same rows `load_features` would give after a write/read trip).
    pub fn aligned_features(&self) -> (FeatureMatrix, FeatureMatrix) {
        let cfg = &self.ledger.config;
        (
            self.align(Modality::Visual, &self.visual_full, cfg.d1()),
            self.align(Modality::Textual, &self.textual_full, cfg.d2()),
        )
    }

    fn align(&self, modality: Modality, full: &[f32], cols: usize) -> FeatureMatrix {
        let mut original = std::collections::HashMap::new();
        for (idx, id) in self.item_ids.iter().enumerate() {
            original.insert(id.as_str(), idx);
        }
        let mut values = Vec::with_capacity(self.dataset.n_items() * cols);
        for id in &self.dataset.items {
            let row = original[id.as_str()];
            values.extend(full[row * cols..(row + 1) * cols].iter().map(|&v| v as f64));
        }
        FeatureMatrix::new(modality, self.dataset.n_items(), cols, values)
    }

    /// True label for original (user, item) indices.
    pub fn label(&self, user: usize, item: usize) -> bool {
        self.relevance[user * self.ledger.config.n_items + item]
    }
}

fn draw_bits(rng: &mut Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.next_u64() & 1 == 1).collect()
}

fn is_relevant(cfg: &SynthConfig, bits: &ItemBits, key: &UserKeys) -> bool {
    if cfg.bits_unique_1 > 0 && !majority_vote(&bits.unique1, &key.unique1) {
        return false;
    }
    if cfg.bits_unique_2 > 0 && !majority_vote(&bits.unique2, &key.unique2) {
        return false;
    }
    if cfg.bits_redundant > 0 && !majority_vote(&bits.redundant, &key.redundant) {
        return false;
    }
    if cfg.bits_synergy > 0 {
        let xor: Vec<bool> = bits
            .synergy1
            .iter()
            .zip(&bits.synergy2)
            .map(|(a, b)| a != b)
            .collect();
        if !majority_vote(&xor, &key.synergy) {
            return false;
        }
    }
    true
}

fn embed_row(
    out: &mut Vec<f32>,
    bit_groups: &[&Vec<bool>],
    noise_dims: usize,
    noise_sigma: f64,
    rng: &mut Rng,
) {
    for group in bit_groups {
        for &bit in group.iter() {
            let code = if bit { 1.0 } else { -1.0 };
            out.push((code + noise_sigma * rng.normal()) as f32);
        }
    }
    for _ in 0..noise_dims {
        out.push(rng.normal() as f32);
    }
}
