//! Weight files: one JSON header line, then the parameters as raw
//! little-endian f64 values in layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, Network};
use super::tensor::TensorEntry;
use crate::error::{Error, Result};

pub const WEIGHT_FORMAT: &str = "chlorolab-weights/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub format: String,
    pub architecture: ArchConfig,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub epoch: usize,
    pub dtype: String,
}

pub fn save_weights(path: impl AsRef<Path>, net: &Network, params: &[f64], seed: u64, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    if params.len() != net.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters for a network of {}",
            params.len(),
            net.param_count()
        )));
    }
    let header = WeightHeader {
        format: WEIGHT_FORMAT.into(),
        architecture: net.arch.clone(),
        tensors: net.layout.entries.clone(),
        seed,
        epoch,
        dtype: "f64-le".into(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(Network, Vec<f64>, WeightHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::MalformedSidecar {
        path: path.to_path_buf(),
        reason,
    };
    let split = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: WeightHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != WEIGHT_FORMAT || header.dtype != "f64-le" {
        return Err(bad(format!("unsupported format {} / {}", header.format, header.dtype)));
    }
    let net = Network::new(header.architecture.clone())?;
    if net.layout.entries != header.tensors {
        return Err(bad("tensor list does not match the architecture".into()));
    }
    let blob = &bytes[split + 1..];
    if blob.len() != net.param_count() * 8 {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            net.param_count() * 8,
            blob.len()
        )));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((net, params, header))
}
