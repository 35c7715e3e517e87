//! Weight checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GPRVCKPT"
//! version    u32      currently 1
//! header_len u64      length of the JSON header in bytes
//! header     JSON     { model_kind, metadata, tensors: [{name, shape, offset}] }
//! data       f64 LE   all tensors back to back, `offset` counted in elements
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Params;

pub const MAGIC: &[u8; 8] = b"GPRVCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor {name}: checkpoint shape {found:?}, model shape {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint data truncated")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model_kind: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model<M: Params>(model: &M, model_kind: &str, metadata: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        model.visit("", &mut |name, shape, values| {
            tensors.push(TensorEntry { name: name.to_string(), shape: shape.to_vec(), offset: data.len() });
            data.extend_from_slice(values);
        });
        Self { model_kind: model_kind.to_string(), metadata, tensors, data }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model_kind: self.model_kind.clone(),
            metadata: self.metadata.clone(),
            tensors: self.tensors.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|_| CheckpointError::Truncated)?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        if r.len() < header_len {
            return Err(CheckpointError::Truncated);
        }
        let header: Header =
            serde_json::from_slice(&r[..header_len]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let body = &r[header_len..];
        if body.len() % 8 != 0 {
            return Err(CheckpointError::Truncated);
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset + n > data.len() {
                return Err(CheckpointError::Truncated);
            }
        }
        Ok(Self { model_kind: header.model_kind, metadata: header.metadata, tensors: header.tensors, data })
    }

    /// Atomic write: temp file in the destination directory, then rename.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.model_kind != kind {
            return Err(CheckpointError::WrongKind { expected: kind.to_string(), found: self.model_kind.clone() });
        }
        Ok(())
    }

    fn lookup(&self) -> HashMap<&str, &TensorEntry> {
        self.tensors.iter().map(|t| (t.name.as_str(), t)).collect()
    }

    /// Overwrites every tensor of `model`; names and shapes must match.
    pub fn load_into<M: Params>(&self, model: &mut M) -> Result<(), CheckpointError> {
        self.load_matching(model, |name| Some(name.to_string()))
    }

    /// Overwrites the tensors of `model` under `prefix.` from a checkpoint
    /// whose names are relative to that prefix (an exported sub-module).
    pub fn load_prefixed_into<M: Params>(&self, model: &mut M, prefix: &str) -> Result<(), CheckpointError> {
        let lead = format!("{prefix}.");
        self.load_matching(model, |name| name.strip_prefix(&lead).map(str::to_string))
    }

    fn load_matching<M, F>(&self, model: &mut M, map: F) -> Result<(), CheckpointError>
    where
        M: Params,
        F: Fn(&str) -> Option<String>,
    {
        let index = self.lookup();
        let mut result = Ok(());
        model.visit_mut("", &mut |name, shape, values| {
            if result.is_err() {
                return;
            }
            let Some(key) = map(name) else { return };
            match index.get(key.as_str()) {
                None => result = Err(CheckpointError::MissingTensor(key)),
                Some(entry) if entry.shape != shape => {
                    result = Err(CheckpointError::ShapeMismatch {
                        name: key,
                        expected: shape.to_vec(),
                        found: entry.shape.clone(),
                    })
                }
                Some(entry) => values.copy_from_slice(&self.data[entry.offset..entry.offset + values.len()]),
            }
        });
        result
    }
}
