//! Versioned binary container for trained detectors.
//!
//! Layout (little-endian): magic `CACDET\0\0`, `u32` version, `u32` length
//! of a JSON descriptor, the descriptor, then every parameter tensor as
//! `f32` values in descriptor order.

use std::fs;
use std::path::Path;

use cac_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{Architecture, DetectorModel};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"CACDET\0\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    arch: Architecture,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn encode(model: &DetectorModel) -> Vec<u8> {
    let desc = Descriptor {
        arch: model.arch.clone(),
        tensors: model.arch.param_shapes(),
    };
    let json = serde_json::to_vec(&desc).expect("descriptor serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &model.params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DetectorModel> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a detector checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated descriptor".into()))?;
    let desc: Descriptor = serde_json::from_slice(json).map_err(|e| bad(format!("descriptor: {e}")))?;
    desc.arch.validate().map_err(|e| bad(e.to_string()))?;
    if desc.tensors != desc.arch.param_shapes() {
        return Err(bad("tensor list does not match the architecture".into()));
    }
    let mut off = 16 + len;
    let mut params = Vec::with_capacity(desc.tensors.len());
    for (name, shape) in &desc.tensors {
        let n: usize = shape.iter().product();
        let raw = bytes.get(off..off + 4 * n).ok_or_else(|| bad(format!("truncated tensor {name}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Tensor::new(shape.clone(), data)?);
        off += 4 * n;
    }
    if off != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(DetectorModel { arch: desc.arch, params })
}

pub fn save(path: &Path, model: &DetectorModel) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path) -> Result<DetectorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
