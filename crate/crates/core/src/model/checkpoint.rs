//! Single-file checkpoint: magic, JSON header, little-endian `f64` payload.
//!
//! ```text
//! b"XMMPCKPT" | u64 LE header length | header JSON | payload
//! ```
//!
//! The header lists every tensor (name, shape, element offset), the model
//! configuration, optional dataset metadata, and a CRC-32 of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::xmmp::Model;
use crate::autodiff::Tensor;
use crate::data::dataset::DatasetMeta;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"XMMPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    crc32: u32,
    payload_values: usize,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    meta: Option<DatasetMeta>,
}

/// A model together with the preprocessing context it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: Option<DatasetMeta>,
}

pub fn to_bytes(model: &Model, meta: Option<&DatasetMeta>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.params.num_scalars() * 8);
    let mut tensors = Vec::with_capacity(model.params.len());
    let mut offset = 0;
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.numel();
    }
    let header = Header {
        version: FORMAT_VERSION,
        crc32: crc32fast::hash(&payload),
        payload_values: offset,
        config: model.config.clone(),
        tensors,
        meta: meta.cloned(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let truncated = || Error::Checkpoint("file is truncated".into());
    if bytes.len() < 16 {
        return Err(truncated());
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(truncated());
    }
    let header: Header = serde_json::from_slice(&body[..header_len])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version { found: header.version, expected: FORMAT_VERSION });
    }
    let payload = &body[header_len..];
    if payload.len() != header.payload_values * 8 {
        return Err(truncated());
    }
    if crc32fast::hash(payload) != header.crc32 {
        return Err(Error::Checksum);
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamStore::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n;
        if end > values.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` runs past the payload", entry.name)));
        }
        params.insert(entry.name, Tensor::new(entry.shape, values[entry.offset..end].to_vec())?);
    }
    let model = Model { config: header.config, params };
    verify_shapes(&model)?;
    Ok(Checkpoint { model, meta: header.meta })
}

/// Compares every stored tensor against a freshly initialised model of the
/// same configuration.
fn verify_shapes(model: &Model) -> Result<()> {
    let reference = Model::new(model.config.clone(), 0)?;
    for (name, t) in reference.params.iter() {
        let found = model
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        if found.shape() != t.shape() {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: found.shape().to_vec(),
            });
        }
    }
    if reference.params.len() != model.params.len() {
        return Err(Error::Checkpoint("checkpoint holds unexpected parameters".into()));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, meta: Option<&DatasetMeta>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
