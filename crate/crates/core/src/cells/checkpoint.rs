//! Self-describing JSON checkpoints with bit-exact tensor payloads.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::head::HeadSpec;
use super::model::{Model, ModelConfig};
use super::params::CellKind;
use super::CellError;
use crate::numeric::{GroupKind, ParamSet, Tensor};
use crate::util::{decode_f64s, digest_f64_slices, encode_f64s};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error("unsupported checkpoint format version {found} (this build reads {supported})")]
    Version { found: u64, supported: u32 },
    #[error("tensor digest mismatch: header says {expected}, payload hashes to {found}")]
    Digest { expected: String, found: String },
    #[error("tensor '{name}': expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor '{name}': {message}")]
    Decode { name: String, message: String },
    #[error(transparent)]
    Model(#[from] CellError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub group: GroupKind,
    pub shape: Vec<usize>,
    /// Base64 of the little-endian f64 bytes.
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub cell_type: CellKind,
    pub dims: Dims,
    pub head: HeadSpec,
    pub integration_group: GroupKind,
    pub seed: u64,
    pub digest: String,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<Value>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

/// SHA-256 over every tensor's bytes in enumeration order.
pub fn params_digest(params: &ParamSet) -> String {
    digest_f64_slices(params.iter().map(|e| e.tensor.data()))
}

/// Tensor records in enumeration order.
pub fn encode_params(params: &ParamSet) -> Vec<TensorRecord> {
    params
        .iter()
        .map(|e| TensorRecord {
            name: e.name.clone(),
            group: e.group,
            shape: e.tensor.shape().to_vec(),
            data: encode_f64s(e.tensor.data()),
        })
        .collect()
}

pub fn decode_params(records: &[TensorRecord]) -> Result<ParamSet, CheckpointError> {
    let mut set = ParamSet::new();
    for rec in records {
        let err = |message: String| CheckpointError::Decode {
            name: rec.name.clone(),
            message,
        };
        let data = decode_f64s(&rec.data).map_err(|e| err(e.to_string()))?;
        let tensor = Tensor::from_vec(rec.shape.clone(), data).map_err(|e| err(e.to_string()))?;
        set.push(rec.name.clone(), rec.group, tensor);
    }
    Ok(set)
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let params = model.params();
        let cfg = model.config;
        Checkpoint {
            format_version: FORMAT_VERSION,
            tool_version: crate::VERSION.to_string(),
            cell_type: cfg.cell,
            dims: Dims {
                n: cfg.input_dim,
                m: cfg.hidden,
                c: cfg.pool,
                layers: cfg.layers,
            },
            head: cfg.head,
            integration_group: cfg.integration_group,
            seed: model.seed,
            digest: params_digest(&params),
            tensors: encode_params(&params),
            optimizer: None,
            training: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            cell: self.cell_type,
            input_dim: self.dims.n,
            hidden: self.dims.m,
            pool: self.dims.c,
            layers: self.dims.layers,
            head: self.head,
            integration_group: self.integration_group,
        }
    }

    /// Decodes the tensors, checking shapes against the declared
    /// configuration and the payload against the digest.
    pub fn params(&self) -> Result<ParamSet, CheckpointError> {
        let template = Model::zeros(self.config())?;
        let layout = template.layout();
        if layout.len() != self.tensors.len() {
            return Err(CheckpointError::Parse(format!(
                "configuration implies {} tensors, file has {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        let mut set = ParamSet::new();
        for ((name, group, shape), rec) in layout.into_iter().zip(&self.tensors) {
            if rec.name != name {
                return Err(CheckpointError::Parse(format!("expected tensor '{name}', found '{}'", rec.name)));
            }
            if rec.shape != shape {
                return Err(CheckpointError::Shape {
                    name,
                    expected: shape,
                    found: rec.shape.clone(),
                });
            }
            let data = decode_f64s(&rec.data).map_err(|e| CheckpointError::Decode {
                name: name.clone(),
                message: e.to_string(),
            })?;
            let tensor = Tensor::from_vec(shape.clone(), data).map_err(|e| CheckpointError::Decode {
                name: name.clone(),
                message: e.to_string(),
            })?;
            set.push(name, group, tensor);
        }
        let found = params_digest(&set);
        if found != self.digest {
            return Err(CheckpointError::Digest {
                expected: self.digest.clone(),
                found,
            });
        }
        Ok(set)
    }

    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let params = self.params()?;
        Ok(Model::from_params(self.config(), self.seed, &params)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CheckpointError::Parse(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| CheckpointError::Parse("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::Version {
                found,
                supported: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}
