//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `CTRSINK\0`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header (dtype, model config,
//! caller metadata, parameter names and shapes), then every parameter's
//! values as raw little-endian floats in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;

use super::{Model, ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"CTRSINK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    #[serde(default)]
    extra: Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn err(m: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(m.into())
}

/// Writes `model` plus arbitrary JSON `extra` (vocabulary, pipeline settings).
pub fn save_checkpoint<F: Scalar>(path: &Path, model: &Model<F>, extra: &Value) -> Result<(), ModelError> {
    let header = Header {
        dtype: F::DTYPE.to_string(),
        config: model.config().clone(),
        extra: extra.clone(),
        params: model
            .params()
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + model.params().num_scalars() * F::WIDTH);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, p) in model.params().iter() {
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    }
    fs::write(path, buf).map_err(|e| err(format!("cannot write {}: {e}", path.display())))
}

/// Reads a checkpoint written with the same scalar width.
pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(Model<F>, Value), ModelError> {
    let bytes = fs::read(path).map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).unwrap_or_default();
    if body.len() < hlen {
        return Err(err("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| err(format!("bad header: {e}")))?;
    if header.dtype != F::DTYPE {
        return Err(err(format!("checkpoint holds {} values, expected {}", header.dtype, F::DTYPE)));
    }
    let mut data = &body[hlen..];
    let mut store = ParamStore::new();
    for entry in header.params {
        let numel: usize = entry.shape.iter().product();
        let need = numel * F::WIDTH;
        if data.len() < need {
            return Err(err(format!("truncated data for `{}`", entry.name)));
        }
        let values: Vec<F> = data[..need].chunks_exact(F::WIDTH).map(F::read_le).collect();
        data = &data[need..];
        store.register(entry.name, Tensor::new(entry.shape, values))?;
    }
    if !data.is_empty() {
        return Err(err(format!("{} trailing bytes", data.len())));
    }
    Ok((Model::from_params(header.config, store)?, header.extra))
}
