//! Named-tensor checkpoint container.
//!
//! Layout:
//!
//! | bytes          | content                                          |
//! |----------------|--------------------------------------------------|
//! | 0..8           | magic `SSNCKPT1`                                 |
//! | 8..16          | header length `L`, u64 little-endian             |
//! | 16..16+L       | UTF-8 JSON header                                |
//! | 16+L..         | tensor data, f32 little-endian, header order     |
//!
//! The header maps each tensor name to `{dtype, shape, offset, length}`
//! with `offset` relative to the start of the data section. An optional
//! `__metadata__` entry records the architecture and model config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::architecture::{ArchitectureKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{DType, Element};

pub const MAGIC: &[u8; 8] = b"SSNCKPT1";
pub const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub architecture: ArchitectureKind,
    pub config: ModelConfig,
    /// Class labels in index order, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryHeader {
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// Ordered collection of f32 tensors keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Option<CheckpointMetadata>,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    /// Snapshot of every stored tensor (trainable and running statistics).
    pub fn from_model<T: Element>(model: &Model<T>) -> Self {
        let entries = model
            .store
            .iter()
            .map(|(_, p)| CheckpointEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint {
            metadata: Some(CheckpointMetadata {
                architecture: model.kind,
                config: model.config,
                classes: Vec::new(),
            }),
            entries,
        }
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Map::new();
        if let Some(meta) = &self.metadata {
            header.insert(METADATA_KEY.into(), serde_json::to_value(meta)?);
        }
        let mut offset = 0u64;
        for e in &self.entries {
            let numel: usize = e.shape.iter().product();
            if numel != e.data.len() {
                return Err(Error::Shape(format!(
                    "checkpoint entry `{}` has shape {:?} but {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            if e.name == METADATA_KEY || header.contains_key(&e.name) {
                return Err(Error::Contract(format!("duplicate checkpoint entry `{}`", e.name)));
            }
            let length = (numel * DType::F32.size()) as u64;
            let h = EntryHeader {
                dtype: DType::F32,
                shape: e.shape.clone(),
                offset,
                length,
            };
            header.insert(e.name.clone(), serde_json::to_value(h)?);
            offset += length;
        }
        let header = serde_json::to_vec(&Value::Object(header))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::format("checkpoint magic", "file does not start with SSNCKPT1"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::format("checkpoint header length", "header runs past end of file"))?;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let data = &bytes[data_start..];

        let mut ckpt = Checkpoint::default();
        for (name, value) in header {
            if name == METADATA_KEY {
                ckpt.metadata = Some(
                    serde_json::from_value(value)
                        .map_err(|e| Error::format("checkpoint metadata", e.to_string()))?,
                );
                continue;
            }
            let h: EntryHeader = serde_json::from_value(value)
                .map_err(|e| Error::format(format!("checkpoint entry `{name}`"), e.to_string()))?;
            if h.dtype != DType::F32 {
                return Err(Error::format(format!("checkpoint entry `{name}` dtype"), "only f32 is supported"));
            }
            let numel: usize = h.shape.iter().product();
            if h.length as usize != numel * 4 {
                return Err(Error::format(
                    format!("checkpoint entry `{name}` length"),
                    format!("{} bytes for shape {:?}", h.length, h.shape),
                ));
            }
            let (start, end) = (h.offset as usize, (h.offset + h.length) as usize);
            if end > data.len() {
                return Err(Error::format(format!("checkpoint entry `{name}`"), "data truncated"));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            ckpt.entries.push(CheckpointEntry {
                name,
                shape: h.shape,
                data: values,
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint<T: Element>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

/// Copies every entry of `ckpt` into `model`; names and shapes must match
/// one-to-one.
pub fn load_state<T: Element>(model: &mut Model<T>, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.entries.len() != model.store.len() {
        return Err(Error::Surgery {
            name: "<all>".into(),
            reason: format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.entries.len(),
                model.store.len()
            ),
        });
    }
    for entry in &ckpt.entries {
        copy_entry(model, entry)?;
    }
    Ok(())
}

pub(crate) fn copy_entry<T: Element>(model: &mut Model<T>, entry: &CheckpointEntry) -> Result<()> {
    let id = model.store.id_of(&entry.name).ok_or_else(|| Error::Surgery {
        name: entry.name.clone(),
        reason: "no such tensor in the model".into(),
    })?;
    let p = model.store.get_mut(id);
    if p.value.shape() != entry.shape.as_slice() {
        return Err(Error::Surgery {
            name: entry.name.clone(),
            reason: format!("shape {:?} in checkpoint, {:?} in model", entry.shape, p.value.shape()),
        });
    }
    for (dst, &src) in p.value.data_mut().iter_mut().zip(&entry.data) {
        *dst = T::from_f64(src as f64);
    }
    Ok(())
}
