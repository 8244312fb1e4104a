//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"PRGNCKPT"
//! 8       4     format version, u32 LE (currently 1)
//! 12      8     header length H, u64 LE
//! 20      H     UTF-8 JSON header: {"model_config", "provenance", "tensors": [{"name", "shape"}]}
//! 20+H    ...   every tensor in header order, f32 LE, row-major
//! ```
//!
//! The file must end exactly after the last tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParams};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PRGNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 20;

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub iteration: u64,
    pub val_accuracy: Option<f64>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Training settings, stored opaquely so this module does not depend on them.
    #[serde(default)]
    pub train_config: serde_json::Value,
    /// Description of the initialization scheme.
    pub init: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_config: ModelConfig,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: Provenance,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.model.params.tensors();
        let header = Header {
            model_config: self.model.config.clone(),
            provenance: self.provenance.clone(),
            tensors: tensors.iter().map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = tensors.iter().map(|(_, t)| t.numel()).sum();
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * n_values);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < PREAMBLE {
            return Err(ModelError::CheckpointTruncated);
        }
        if bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[PREAMBLE..];
        if body.len() < header_len {
            return Err(ModelError::CheckpointTruncated);
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("checkpoint header: {e}")))?;
        header.model_config.validate()?;

        let expected = ModelParams::expected_shapes(&header.model_config);
        if expected.len() != header.tensors.len() {
            return Err(corrupt(format!(
                "checkpoint lists {} tensors, config implies {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for (entry, shape) in header.tensors.iter().zip(&expected) {
            if &entry.shape != shape {
                return Err(corrupt(format!(
                    "tensor {} has shape {:?}, config implies {shape:?}",
                    entry.name, entry.shape
                )));
            }
        }

        let payload = &body[header_len..];
        let n_values: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
        if payload.len() < 4 * n_values {
            return Err(ModelError::CheckpointTruncated);
        }
        if payload.len() > 4 * n_values {
            return Err(corrupt(format!("{} trailing bytes after checkpoint payload", payload.len() - 4 * n_values)));
        }
        let mut values = payload.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        let tensors = header
            .tensors
            .iter()
            .map(|entry| {
                let n = entry.shape.iter().product();
                let data: Vec<f64> = values.by_ref().take(n).collect();
                let t = Tensor::new(entry.shape.clone(), data)?;
                if !t.is_finite() {
                    return Err(corrupt(format!("tensor {} contains non-finite values", entry.name)));
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let params = ModelParams::from_tensors(&header.model_config, tensors)?;
        Ok(Self { model: Model::new(header.model_config, params)?, provenance: header.provenance })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_bytes(&bytes)
    }
}
