//! Binary checkpoint container.
//!
//! Layout: the magic bytes `HSCKPT01`, a little-endian `u64` byte length,
//! a JSON metadata block of that length, then every parameter's values as
//! little-endian `f64` in the order listed under `tensors` in the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeterminantScaler, Model};
use crate::autodiff::{Array, Params};
use crate::error::{Error, Result};
use crate::geo::Normalizer;
use crate::ingest::CrimeType;

const MAGIC: &[u8; 8] = b"HSCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: Model,
    pub crime_type: CrimeType,
    pub seed: u64,
    pub config_hash: String,
    pub neighbors: usize,
    pub normalizer: Normalizer,
    pub determinant_scaler: Option<DeterminantScaler>,
    /// Learning rate and epoch budget chosen on validation.
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Params,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.meta.model.check_params(&ckpt.params)?;
    let mut meta = ckpt.meta.clone();
    meta.tensors = ckpt
        .params
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        })
        .collect();
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * ckpt.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in ckpt.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(json)?;
    let mut cursor = 16 + len;
    let mut params = Params::new();
    for t in &meta.tensors {
        let n: usize = t.shape.iter().product();
        let raw = bytes
            .get(cursor..cursor + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated data for `{}`", t.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(t.name.clone(), Array::new(t.shape.clone(), data)?)?;
        cursor += 8 * n;
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    meta.model.check_params(&params)?;
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
