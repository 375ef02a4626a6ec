use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "dam2p-checkpoint/v1";

/// One tensor as stored on disk: its shape and little-endian `f64` bytes in
/// base64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl StoredTensor {
    pub fn encode(t: &Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        StoredTensor { shape: t.shape().to_vec(), data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint("payload is not a whole number of f64s".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => return Err(Error::Checkpoint(format!("unsupported shape {other:?}"))),
        };
        Tensor::from_vec(rows, cols, values).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// A named set of tensors plus free-form metadata, serialized as one JSON
/// document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint { format: FORMAT_TAG.to_owned(), meta, params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: &Tensor) {
        self.params.insert(name.into(), StoredTensor::encode(t));
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?
            .decode()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!("unknown format tag {:?}", ck.format)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
