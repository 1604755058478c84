//! Single-file checkpoint: 8-byte magic, `u32` format version, `u32` manifest
//! length, JSON manifest, then every tensor as little-endian `f32` in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, Normalization, SurrogateWeights, TENSOR_NAMES};
use crate::cycles::digest_hex;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CSURCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub normalization: Normalization,
    pub init_seed: u64,
    pub init_scheme: String,
    pub tensors: Vec<TensorEntry>,
    pub payload_values: usize,
    pub payload_sha256: String,
}

pub fn checkpoint_bytes(weights: &SurrogateWeights) -> Result<Vec<u8>> {
    weights.validate()?;
    let mut payload = Vec::with_capacity(4 * weights.architecture.parameter_count());
    for t in &weights.tensors {
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        architecture: weights.architecture,
        normalization: weights.normalization,
        init_seed: weights.init_seed,
        init_scheme: "uniform +-sqrt(6/(fan_in+fan_out)), zero bias, ChaCha8".into(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(&weights.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_values: payload.len() / 4,
        payload_sha256: digest_hex(&payload),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(HEADER + json.len() + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<SurrogateWeights> {
    if bytes.len() < HEADER {
        return Err(bad(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(HEADER..HEADER.saturating_add(json_len))
        .ok_or_else(|| bad(format!("manifest length {json_len} exceeds file size")))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(json).map_err(|e| bad(format!("manifest is not valid: {e}")))?;
    if manifest.format_version != version {
        return Err(bad("manifest version disagrees with header"));
    }
    let arch = manifest.architecture;
    arch.validate().map_err(|e| bad(e.to_string()))?;
    manifest.normalization.validate().map_err(|e| bad(e.to_string()))?;
    let shapes = arch.shapes();
    if manifest.tensors.len() != shapes.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            shapes.len()
        )));
    }
    for ((entry, shape), name) in manifest.tensors.iter().zip(&shapes).zip(TENSOR_NAMES) {
        if entry.name != name || &entry.shape != shape {
            return Err(bad(format!(
                "tensor `{}` {:?} does not match architecture `{name}` {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let payload = &bytes[HEADER + json_len..];
    if manifest.payload_values != expected || payload.len() != 4 * expected {
        return Err(bad(format!(
            "payload holds {} bytes, architecture needs {} values",
            payload.len(),
            expected
        )));
    }
    if digest_hex(payload) != manifest.payload_sha256 {
        return Err(bad("payload checksum mismatch"));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut tensors = Vec::with_capacity(shapes.len());
    for (shape, name) in shapes.iter().zip(TENSOR_NAMES) {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor `{name}` contains non-finite values")));
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(SurrogateWeights {
        architecture: arch,
        normalization: manifest.normalization,
        init_seed: manifest.init_seed,
        tensors,
    })
}

pub fn save_checkpoint(weights: &SurrogateWeights, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(weights)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SurrogateWeights> {
    parse_checkpoint(&std::fs::read(path)?)
}
