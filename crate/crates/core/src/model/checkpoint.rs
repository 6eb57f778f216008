//! Single-file model archive.
//!
//! Layout: `EMTC`, format version (u32 LE), header length (u64 LE), a UTF-8
//! JSON header, then every array as little-endian `f32`, in header order.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmoTech, ModelConfig, ModelError};
use crate::tensor::{Real, Tensor};
use crate::text::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"EMTC";
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub fold: Option<usize>,
    pub epoch: Option<usize>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// Everything stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// [`Vocabulary::digest`] of the table the embedding was trained with.
    pub vocab_digest: Option<String>,
    #[serde(default)]
    pub training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: u64,
    byte_length: u64,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
    arrays: Vec<ArrayEntry>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

/// Serializes `model`. Weights are stored as `f32` whatever `T` is.
pub fn write_checkpoint<T: Real>(model: &EmoTech<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut payload = Vec::with_capacity(4 * model.store().scalar_count());
    let mut arrays = Vec::new();
    for e in model.store().entries() {
        let start = payload.len();
        for &v in e.value.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            trainable: e.trainable,
            offset: start as u64,
            byte_length: (payload.len() - start) as u64,
            sha256: hex::encode(Sha256::digest(&payload[start..])),
        });
    }
    let header = Header {
        config: model.config().clone(),
        meta: meta.clone(),
        arrays,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(EmoTech<f32>, CheckpointMeta), ModelError> {
    if bytes.len() < PREAMBLE {
        return Err(corrupt(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let payload_start = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header runs past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let payload = &bytes[payload_start..];
    let expected: u64 = header.arrays.iter().map(|a| a.byte_length).sum();
    if payload.len() as u64 != expected {
        return Err(corrupt(format!("payload is {} bytes, header lists {expected}", payload.len())));
    }

    let mut model = EmoTech::<f32>::new(header.config, 0).map_err(|e| corrupt(e.to_string()))?;
    let store = model.store_mut();
    if store.len() != header.arrays.len() {
        return Err(corrupt(format!(
            "{} arrays stored, architecture has {}",
            header.arrays.len(),
            store.len()
        )));
    }
    for (entry, a) in store.entries_mut().iter_mut().zip(&header.arrays) {
        if entry.name != a.name || entry.value.shape() != a.shape.as_slice() {
            return Err(corrupt(format!(
                "array {} {:?} does not match architecture {} {:?}",
                a.name,
                a.shape,
                entry.name,
                entry.value.shape()
            )));
        }
        let range = usize::try_from(a.offset)
            .ok()
            .zip(usize::try_from(a.byte_length).ok())
            .and_then(|(o, n)| Some(o..o.checked_add(n)?))
            .filter(|r| r.end <= payload.len() && r.len() == 4 * entry.value.len())
            .ok_or_else(|| corrupt(format!("array {} has a bad extent", a.name)))?;
        let raw = &payload[range];
        if hex::encode(Sha256::digest(raw)) != a.sha256 {
            return Err(corrupt(format!("checksum mismatch in {}", a.name)));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entry.value = Tensor::new(a.shape.clone(), data)?;
        entry.trainable = a.trainable;
    }
    Ok((model, header.meta))
}

/// Writes through a temporary file so a crash never leaves a half-written archive.
pub fn save_checkpoint<T: Real>(model: &EmoTech<T>, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&write_checkpoint(model, meta))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EmoTech<f32>, CheckpointMeta), ModelError> {
    read_checkpoint(&std::fs::read(path)?)
}

/// Like [`load_checkpoint`], but refuses a model trained on another vocabulary.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<(EmoTech<f32>, CheckpointMeta), ModelError> {
    let (model, meta) = load_checkpoint(path)?;
    let cfg = model.config();
    if cfg.modality.uses_text() && cfg.vocab_size != vocab.len() {
        return Err(ModelError::VocabularyMismatch(format!(
            "checkpoint embeds {} words, vocabulary has {}",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    if let Some(d) = &meta.vocab_digest {
        if *d != vocab.digest() {
            return Err(ModelError::VocabularyMismatch("vocabulary digest differs from checkpoint".into()));
        }
    }
    Ok((model, meta))
}
