//! Checkpoint file: `u64` LE header length, a JSON header, then every tensor
//! of [`ModelParams::tensors`] as little-endian `f64` in that order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::{ArchConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::fs;

pub const CHECKPOINT_FORMAT: &str = "bline-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(params: &ModelParams, train: &TrainConfig, epoch: usize, metrics: BTreeMap<String, f64>) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        arch: params.arch.clone(),
        train: train.clone(),
        epoch,
        metrics,
        tensors: tensors
            .iter()
            .map(|(name, _, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * tensors.iter().map(|t| t.2.len()).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in &tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams)> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format("header", "file shorter than the length prefix"))?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| Error::format("header", "length overflow"))?;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| Error::format("header", "truncated JSON header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| Error::format("header", e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::format("format", format!("unsupported checkpoint format {:?}", header.format)));
    }
    header.arch.validate()?;
    let mut params = ModelParams::zeros(&header.arch);
    let mut payload = &bytes[8 + len..];
    {
        let tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(Error::format("tensors", "tensor count does not match the architecture"));
        }
        for ((name, _, t), entry) in tensors.into_iter().zip(&header.tensors) {
            if name != entry.name || t.shape != entry.shape {
                return Err(Error::format("tensors", format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
            }
            let need = 8 * t.len();
            if payload.len() < need {
                return Err(Error::format("payload", format!("truncated in {name}")));
            }
            for (v, chunk) in t.data.iter_mut().zip(payload[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            payload = &payload[need..];
        }
    }
    if !payload.is_empty() {
        return Err(Error::format("payload", format!("{} trailing bytes", payload.len())));
    }
    Ok((header, params))
}

pub fn save(path: &Path, params: &ModelParams, train: &TrainConfig, epoch: usize, metrics: BTreeMap<String, f64>) -> Result<()> {
    fs::write_atomic(path, &encode(params, train, epoch, metrics)?)
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    decode(&fs::read(path)?)
}
