//! Checkpoint files.
//!
//! Layout: the 8-byte magic `SMCLCKPT`, a little-endian `u32` version, a
//! `u64` header length, the JSON header, then every tensor's raw
//! little-endian values back to back in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use smcl_core::TrainConfig;

use crate::dataset::Normalization;
use crate::error::{contract, Error, IoContext, Result};
use crate::model::{Model, ModelSpec};
use crate::optim::MomentumSgd;

const MAGIC: &[u8; 8] = b"SMCLCKPT";
const VERSION: u32 = 1;

/// Everything in a checkpoint except the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub config_fingerprint: String,
    /// Number of completed epochs.
    pub epoch: usize,
    pub normalization: Normalization,
    pub config: Option<TrainConfig>,
    pub train_histogram: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Group {
    Param,
    Momentum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    group: Group,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    dtype: String,
    tensors: Vec<Entry>,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(contract(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
        other => return Err(contract(format!("unsupported checkpoint dtype {other:?}"))),
    }
    Ok(())
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

/// Writes model parameters (including running statistics) and optimizer state.
pub fn save(path: &Path, model: &Model, optimizer: Option<&MomentumSgd>, meta: &CheckpointMeta) -> Result<()> {
    let dtype = model.dtype();
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    for (name, var) in model.named_vars() {
        entries.push(Entry {
            name,
            group: Group::Param,
            shape: var.dims().to_vec(),
        });
        tensor_bytes(var.as_tensor(), &mut blob)?;
    }
    if let Some(opt) = optimizer {
        for (name, buf) in opt.buffers() {
            entries.push(Entry {
                name: name.clone(),
                group: Group::Momentum,
                shape: buf.dims().to_vec(),
            });
            tensor_bytes(&buf.to_dtype(dtype)?, &mut blob)?;
        }
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        dtype: dtype_name(dtype)?.to_string(),
        tensors: entries,
    })?;
    let mut bytes = Vec::with_capacity(20 + header.len() + blob.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend(VERSION.to_le_bytes());
    bytes.extend((header.len() as u64).to_le_bytes());
    bytes.extend(header);
    bytes.extend(blob);
    // Write-then-rename so an interrupted save never clobbers the last good file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)?;
    Ok(())
}

/// A checkpoint rebuilt into a live model.
pub struct Loaded {
    pub meta: CheckpointMeta,
    pub model: Model,
    pub momentum: BTreeMap<String, Tensor>,
}

/// Reads only the metadata.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).at(path)?;
    Ok(parse_header(&bytes)?.0.meta)
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("truncated header"))?;
    Ok((serde_json::from_slice(&bytes[20..end])?, end))
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).at(path)?;
    let (header, mut offset) = parse_header(&bytes)?;
    let dtype = match header.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(malformed(format!("unknown dtype {other}"))),
    };
    let width = dtype.size_in_bytes();
    let model = Model::new(header.meta.model, dtype, 0)?;
    let vars: BTreeMap<String, _> = model.named_vars().into_iter().collect();
    let mut momentum = BTreeMap::new();
    let mut seen = 0;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = offset + count * width;
        let raw = bytes.get(offset..end).ok_or_else(|| malformed("truncated tensor data"))?;
        offset = end;
        let tensor = match dtype {
            DType::F32 => {
                let v: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, entry.shape.clone(), &Device::Cpu)?
            }
            _ => {
                let v: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, entry.shape.clone(), &Device::Cpu)?
            }
        };
        match entry.group {
            Group::Param => {
                let var = vars
                    .get(&entry.name)
                    .ok_or_else(|| malformed(format!("unknown parameter {}", entry.name)))?;
                if var.dims() != entry.shape.as_slice() {
                    return Err(malformed(format!("shape mismatch for {}", entry.name)));
                }
                var.set(&tensor)?;
                seen += 1;
            }
            Group::Momentum => {
                momentum.insert(entry.name.clone(), tensor);
            }
        }
    }
    if seen != vars.len() {
        return Err(malformed(format!("{seen} of {} parameters present", vars.len())));
    }
    if offset != bytes.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(Loaded {
        meta: header.meta,
        model,
        momentum,
    })
}
