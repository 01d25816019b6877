//! Model checkpoints: one JSON header line with the tensor table and
//! metadata, then every tensor as little-endian `f32`, in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pkgforge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    NodeClasses,
    TaskClasses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub dim: usize,
    pub bottleneck: usize,
    pub heads: Vec<HeadSpec>,
    pub seed: u64,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    shapes: Vec<TensorShape>,
    metadata: CheckpointMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub shapes: Vec<TensorShape>,
    pub weights: Vec<f32>,
    pub metadata: CheckpointMetadata,
}

impl ModelCheckpoint {
    pub fn new(
        shapes: Vec<TensorShape>,
        weights: Vec<f32>,
        metadata: CheckpointMetadata,
    ) -> Result<Self> {
        let expected: usize = shapes.iter().map(TensorShape::len).sum();
        if expected != weights.len() {
            return Err(Error::Invalid(format!(
                "shape table covers {expected} weights but {} were given",
                weights.len()
            )));
        }
        Ok(Self {
            shapes,
            weights,
            metadata,
        })
    }

    /// Weights of each tensor, in table order.
    pub fn tensors(&self) -> impl Iterator<Item = (&TensorShape, &[f32])> {
        let mut offset = 0;
        self.shapes.iter().map(move |s| {
            let slice = &self.weights[offset..offset + s.len()];
            offset += s.len();
            (s, slice)
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shapes: self.shapes.clone(),
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.weights.len() * 4);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing checkpoint header line"))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "unsupported checkpoint format {} v{}",
                    header.format, header.version
                ),
            ));
        }
        let payload = &bytes[newline + 1..];
        let expected: usize = header.shapes.iter().map(TensorShape::len).sum();
        if payload.len() != expected * 4 {
            return Err(Error::format(
                path,
                format!(
                    "truncated or oversized payload: shape table needs {} bytes, file has {}",
                    expected * 4,
                    payload.len()
                ),
            ));
        }
        let weights = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.shapes, weights, header.metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
