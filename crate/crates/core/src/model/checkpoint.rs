//! Binary checkpoint container.
//!
//! Layout: the magic line `HGCFCKPT\n`, a little-endian `u64` header length,
//! a JSON header (configuration echo, shapes, metadata), then every
//! parameter array as little-endian `f64` in [`ModelParams::arrays`] order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LayerWeights, ModelConfig, ModelParams};
use crate::{Error, Result};

const MAGIC: &[u8] = b"HGCFCKPT\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    /// Free-form echo of the rest of the run configuration.
    #[serde(default)]
    pub echo: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    model: ModelConfig,
    meta: CheckpointMeta,
    shapes: Vec<(usize, usize)>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        format: "hgcf-checkpoint-v1".into(),
        model: ckpt.model.clone(),
        meta: ckpt.meta.clone(),
        shapes: ckpt.params.arrays().iter().map(|a| a.dim()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * ckpt.params.n_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for a in ckpt.params.arrays() {
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("not a checkpoint"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header"));
    }
    let hlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad(&e.to_string()))?;
    let mut data = &rest[hlen..];
    let mut arrays = Vec::with_capacity(header.shapes.len());
    for &(r, c) in &header.shapes {
        let n = r * c;
        if data.len() < 8 * n {
            return Err(bad("truncated parameters"));
        }
        let vals: Vec<f64> = data[..8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        data = &data[8 * n..];
        arrays.push(Array2::from_shape_vec((r, c), vals).expect("shape"));
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    if arrays.is_empty() || arrays.len() % 2 != 1 {
        return Err(bad("unexpected array count"));
    }
    let mut it = arrays.into_iter();
    let embeddings = it.next().unwrap();
    let mut layers = Vec::new();
    while let (Some(w1), Some(w2)) = (it.next(), it.next()) {
        layers.push(LayerWeights { w1, w2 });
    }
    Ok(Checkpoint {
        model: header.model,
        params: ModelParams { embeddings, layers },
        meta: header.meta,
    })
}
