//! Weight blobs: a JSON index of `{name, shape, offset_bytes}` entries and a
//! headerless little-endian `f32` byte stream.

use std::collections::BTreeMap;

use gfp_core::weights::declared_dims;
use gfp_core::{CompGraph, Tensor, WeightError, WeightStore};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset_bytes: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BlobError {
    #[error("weight index is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("TruncatedBlob: `{name}` needs bytes {start}..{end}, blob has {len}")]
    TruncatedBlob {
        name: String,
        start: u64,
        end: u64,
        len: usize,
    },
    #[error("tensors `{0}` and `{1}` overlap in the blob")]
    Overlap(String, String),
    #[error("blob has {len} bytes but the index covers {covered}")]
    LengthMismatch { len: usize, covered: u64 },
    #[error("bad index entry `{name}`: {reason}")]
    BadEntry { name: String, reason: String },
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

/// Decodes every indexed tensor and checks it against what `graph` needs.
pub fn load_weights(graph: &CompGraph, blob: &[u8], index: &str) -> Result<WeightStore, BlobError> {
    let entries: Vec<IndexEntry> = serde_json::from_str(index)?;
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(entries.len());
    let mut store = WeightStore::new();
    let mut declared = BTreeMap::new();
    for e in &entries {
        if e.shape.is_empty() || e.shape.len() > 4 || e.shape.contains(&0) {
            return Err(BlobError::BadEntry {
                name: e.name.clone(),
                reason: format!("shape {:?} must have 1 to 4 positive dims", e.shape),
            });
        }
        if e.offset_bytes % 4 != 0 {
            return Err(BlobError::BadEntry {
                name: e.name.clone(),
                reason: "offset is not a multiple of 4".into(),
            });
        }
        let start = e.offset_bytes;
        let end = start + 4 * numel(&e.shape);
        if end > blob.len() as u64 {
            return Err(BlobError::TruncatedBlob {
                name: e.name.clone(),
                start,
                end,
                len: blob.len(),
            });
        }
        let data: Vec<f32> = blob[start as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(
            e.name.clone(),
            Tensor::from_dims(&e.shape, data).expect("length checked"),
        );
        declared.insert(e.name.clone(), e.shape.clone());
        spans.push((start, end, &e.name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(BlobError::Overlap(w[0].2.to_string(), w[1].2.to_string()));
        }
    }
    let covered: u64 = spans.iter().map(|s| s.1 - s.0).sum();
    if covered != blob.len() as u64 {
        return Err(BlobError::LengthMismatch {
            len: blob.len(),
            covered,
        });
    }
    store.validate(graph, Some(&declared))?;
    Ok(store)
}

/// Packs tensors back to back in name order. Shapes are written as the
/// graph declares them.
pub fn encode(graph: &CompGraph, weights: &WeightStore) -> (Vec<u8>, Vec<IndexEntry>) {
    let mut blob = Vec::new();
    let mut index = Vec::new();
    for (name, t) in weights.iter() {
        let shape = declared_dims(graph, name).unwrap_or_else(|| {
            let s = t.shape();
            let rank = s.iter().rposition(|&d| d != 1).map_or(1, |i| i + 1);
            s[..rank].to_vec()
        });
        index.push(IndexEntry {
            name: name.clone(),
            shape,
            offset_bytes: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (blob, index)
}

pub fn index_to_json(index: &[IndexEntry]) -> String {
    serde_json::to_string_pretty(index).expect("index serializes")
}
