//! The tensor archive: a JSON manifest followed by raw little-endian `f32`
//! arrays. Used for model containers and relevance dumps.
//!
//! Byte layout:
//!
//! ```text
//! offset 0        8 bytes   magic "NTXARC01"
//! offset 8        u64 LE    manifest length L in bytes
//! offset 16       L bytes   UTF-8 JSON manifest
//! offset 16 + L   ...       tensor payload, f32 LE, row-major
//! ```
//!
//! The manifest is an object `{"meta": <any>, "tensors": [{"name", "shape",
//! "offset", "length"}]}` where `offset` is the byte offset of the tensor
//! inside the payload and `length` its element count. Tensors are stored
//! contiguously in manifest order with no padding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NTXARC01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<ArchiveTensor>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(ArchiveTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|t| {
                let entry = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    length: t.data.len() as u64,
                };
                offset += 4 * t.data.len() as u64;
                entry
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .expect("manifest serializes");

        let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = |msg: &str| Error::format("<archive>", msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(header("missing archive magic"));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| header("manifest length exceeds file size"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| header(&format!("invalid manifest: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let fail = |msg: String| Error::format(entry.name.clone(), msg);
            let elements: u64 = entry.shape.iter().map(|&d| d as u64).product();
            if elements != entry.length {
                return Err(fail(format!(
                    "shape {:?} implies {elements} elements but length is {}",
                    entry.shape, entry.length
                )));
            }
            if entry.offset != expected_offset {
                return Err(fail(format!(
                    "offset {} is not contiguous (expected {expected_offset})",
                    entry.offset
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * entry.length as usize;
            if end > payload.len() {
                return Err(fail("tensor data runs past end of archive".into()));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_offset = end as u64;
            tensors.push(ArchiveTensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if expected_offset as usize != payload.len() {
            return Err(header("trailing bytes after last tensor"));
        }
        Ok(Archive {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
