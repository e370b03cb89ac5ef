//! Checkpoint format: one MMF1 container per parameter tensor plus a JSON
//! manifest naming each tensor and its shape. Values pass through f32 on
//! disk, like every other matrix the artifact writes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_matrix, write_matrix, Modality};
use crate::error::{Error, Result};
use crate::infotheory::MineNetwork;
use crate::numcore::Tensor;

use super::{Decoder, DecoderArity, HostModel, ModalityEncoder, ModelDims, MrdibStack};

#[derive(Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Serialize, Deserialize)]
pub struct ModelMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub d: usize,
    pub hidden: usize,
    pub mine_hidden: usize,
    pub d_visual: usize,
    pub d_textual: usize,
    pub has_stack: bool,
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelMeta,
    pub tensors: Vec<TensorEntry>,
    /// Run configuration recorded as-is so downstream commands (eval,
    /// export) can find data paths and dims.
    pub config: serde_json::Value,
}

fn named_tensors(host: &HostModel) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = vec![
        ("user_embeddings".to_string(), host.user_embeddings.clone()),
        ("item_embeddings".to_string(), host.item_embeddings.clone()),
        ("base_projection".to_string(), host.base_projection.clone()),
    ];
    if let Some(stack) = &host.stack {
        let enc_names = ["w1", "b1", "w_mean", "b_mean", "w_logvar", "b_logvar"];
        for (prefix, enc) in [
            ("encoder_visual", &stack.encoder_visual),
            ("encoder_textual", &stack.encoder_textual),
        ] {
            for (n, t) in enc_names.iter().zip(enc.params()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        let dec_names = ["w1", "b1", "w2", "b2"];
        for (prefix, dec) in [
            ("decoder_joint", &stack.decoder_joint),
            ("decoder_uni1", &stack.decoder_uni1),
            ("decoder_uni2", &stack.decoder_uni2),
        ] {
            for (n, t) in dec_names.iter().zip(dec.params()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        let mine_names = ["w1", "b1", "w2", "b2", "w3", "b3"];
        for (n, t) in mine_names.iter().zip(stack.mine.params()) {
            out.push((format!("mine.{n}"), t));
        }
    }
    out
}

/// Writes the model into `dir` (created if absent): `manifest.json` plus
/// one `.mmf` file per tensor.
pub fn save(host: &HostModel, dir: &Path, config: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, tensor) in named_tensors(host) {
        let shape = tensor.shape();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => panic!("checkpoint tensors must be 1-d or 2-d"),
        };
        let file = format!("{name}.mmf");
        let values: Vec<f32> = tensor.values().iter().map(|&v| v as f32).collect();
        write_matrix(&dir.join(&file), rows, cols, &values)?;
        entries.push(TensorEntry { name, shape, file });
    }
    let manifest = CheckpointManifest {
        model: ModelMeta {
            n_users: host.n_users,
            n_items: host.n_items,
            d: host.dims.d,
            hidden: host.dims.hidden,
            mine_hidden: host.dims.mine_hidden,
            d_visual: host.dims.d_visual,
            d_textual: host.dims.d_textual,
            has_stack: host.stack.is_some(),
        },
        tensors: entries,
        config: config.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("corrupt checkpoint manifest {}: {e}", path.display())))
}

/// Reconstructs the model (and the recorded run config) from a checkpoint
/// directory.
pub fn load(dir: &Path) -> Result<(HostModel, serde_json::Value)> {
    let manifest = load_manifest(dir)?;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for entry in &manifest.tensors {
        let (rows, cols, raw) = read_matrix(&dir.join(&entry.file))?;
        let expected: usize = entry.shape.iter().product();
        if rows * cols != expected {
            return Err(Error::Data(format!(
                "checkpoint tensor {} has {} values, manifest says shape {:?}",
                entry.name,
                rows * cols,
                entry.shape
            )));
        }
        let values: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        tensors.insert(entry.name.clone(), Tensor::param(&entry.shape, values));
    }
    let mut take = |name: &str| -> Result<Tensor> {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))
    };

    let m = &manifest.model;
    let dims = ModelDims {
        d: m.d,
        hidden: m.hidden,
        mine_hidden: m.mine_hidden,
        d_visual: m.d_visual,
        d_textual: m.d_textual,
    };
    let user_embeddings = take("user_embeddings")?;
    let item_embeddings = take("item_embeddings")?;
    let base_projection = take("base_projection")?;
    let stack = if m.has_stack {
        let enc_names = ["w1", "b1", "w_mean", "b_mean", "w_logvar", "b_logvar"];
        let enc = |prefix: &str,
                       modality: Modality,
                       input_dim: usize,
                       take: &mut dyn FnMut(&str) -> Result<Tensor>|
         -> Result<ModalityEncoder> {
            let mut weights = Vec::new();
            for n in enc_names {
                weights.push(take(&format!("{prefix}.{n}"))?);
            }
            Ok(ModalityEncoder::from_weights(
                modality, input_dim, m.hidden, m.d, weights,
            ))
        };
        let encoder_visual = enc("encoder_visual", Modality::Visual, m.d_visual, &mut take)?;
        let encoder_textual = enc("encoder_textual", Modality::Textual, m.d_textual, &mut take)?;
        let dec_names = ["w1", "b1", "w2", "b2"];
        let dec = |prefix: &str,
                       arity: DecoderArity,
                       input_dim: usize,
                       take: &mut dyn FnMut(&str) -> Result<Tensor>|
         -> Result<Decoder> {
            let mut weights = Vec::new();
            for n in dec_names {
                weights.push(take(&format!("{prefix}.{n}"))?);
            }
            Ok(Decoder::from_weights(arity, input_dim, m.hidden, m.d, weights))
        };
        let decoder_joint = dec("decoder_joint", DecoderArity::Joint, 2 * m.d, &mut take)?;
        let decoder_uni1 = dec("decoder_uni1", DecoderArity::Unimodal1, m.d, &mut take)?;
        let decoder_uni2 = dec("decoder_uni2", DecoderArity::Unimodal2, m.d, &mut take)?;
        let mut mine_weights = Vec::new();
        for n in ["w1", "b1", "w2", "b2", "w3", "b3"] {
            mine_weights.push(take(&format!("mine.{n}"))?);
        }
        let mine = MineNetwork::from_weights(2 * m.d, m.mine_hidden, mine_weights);
        Some(MrdibStack {
            encoder_visual,
            encoder_textual,
            decoder_joint,
            decoder_uni1,
            decoder_uni2,
            mine,
        })
    } else {
        None
    };

    Ok((
        HostModel {
            n_users: m.n_users,
            n_items: m.n_items,
            dims,
            user_embeddings,
            item_embeddings,
            base_projection,
            stack,
        },
        manifest.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn save_load_round_trip_preserves_f32_values() {
        let rng = Rng::new(7);
        let dims = ModelDims {
            d: 4,
            hidden: 6,
            mine_hidden: 5,
            d_visual: 3,
            d_textual: 2,
        };
        let host = HostModel::new(5, 9, dims, true, &rng);
        let dir = tempfile::tempdir().unwrap();
        save(&host, dir.path(), &serde_json::json!({"seed": 7})).unwrap();
        let (back, config) = load(dir.path()).unwrap();
        assert_eq!(config["seed"], 7);
        assert_eq!(back.n_users, 5);
        assert_eq!(back.n_items, 9);
        assert!(back.stack.is_some());
        let orig: Vec<f32> = host.user_embeddings.values().iter().map(|&v| v as f32).collect();
        let got: Vec<f32> = back.user_embeddings.values().iter().map(|&v| v as f32).collect();
        assert_eq!(orig, got);
        // saving the reloaded model reproduces the same bytes
        let dir2 = tempfile::tempdir().unwrap();
        save(&back, dir2.path(), &serde_json::json!({"seed": 7})).unwrap();
        let a = std::fs::read(dir.path().join("user_embeddings.mmf")).unwrap();
        let b = std::fs::read(dir2.path().join("user_embeddings.mmf")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn host_only_checkpoint_skips_stack_tensors() {
        let rng = Rng::new(8);
        let dims = ModelDims {
            d: 4,
            hidden: 6,
            mine_hidden: 5,
            d_visual: 3,
            d_textual: 2,
        };
        let host = HostModel::new(3, 7, dims, false, &rng);
        let dir = tempfile::tempdir().unwrap();
        save(&host, dir.path(), &serde_json::Value::Null).unwrap();
        let manifest = load_manifest(dir.path()).unwrap();
        assert_eq!(manifest.tensors.len(), 3);
        let (back, _) = load(dir.path()).unwrap();
        assert!(back.stack.is_none());
    }
}
