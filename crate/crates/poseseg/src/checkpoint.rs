//! Binary checkpoint format.
//!
//! Layout: the magic bytes `PSCK`, a little-endian `u32` header length, a
//! JSON header (format version, free-form metadata, and the tensor
//! directory), then the tensor payloads as little-endian `f32` in directory
//! order. The JSON header keeps the format self-describing while the payload
//! stays compact and byte-stable across runs.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor {name}: directory says {expected} values, payload has {got}")]
    DataLength { name: String, expected: usize, got: usize },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {got:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorDirEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Map<String, serde_json::Value>,
    tensors: Vec<TensorDirEntry>,
}

/// A named tensor; values are stored on disk as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorEntry {
            name: name.into(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// In-memory image of a checkpoint file: free-form metadata plus an ordered
/// list of named tensors.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&TensorEntry, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Looks up a tensor, checks its shape, and widens it to `f64`.
    pub fn tensor_f64(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, CheckpointError> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                got: t.shape.clone(),
            });
        }
        Ok(t.to_f64())
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(|v| v.as_str())
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta.get(key).and_then(|v| v.as_u64())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorDirEntry { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for t in &self.tensors {
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(header.format_version));
        }

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    CheckpointError::DataLength {
                        name: entry.name.clone(),
                        expected: count,
                        got: 0,
                    }
                } else {
                    CheckpointError::Io(e)
                }
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(TensorEntry { name: entry.name, shape: entry.shape, data });
        }
        Ok(Checkpoint { meta: header.meta, tensors })
    }
}
