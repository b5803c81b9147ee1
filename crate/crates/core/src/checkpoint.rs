//! Checkpoints: a JSON manifest naming every tensor plus one little-endian
//! `f32` blob holding their values back to back.
//!
//! ```text
//! {
//!   "format": "ktnas-checkpoint",
//!   "version": 1,
//!   "dtype": "f32",
//!   "blob": "weights.bin",
//!   "blob_len": 4096,
//!   "tensors": [{"name": "head.weight", "shape": [128, 1], "offset": 0}, ...],
//!   "metadata": {...}
//! }
//! ```
//!
//! Offsets are in bytes and tensors are stored row-major.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const FORMAT: &str = "ktnas-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> Option<u64> {
        (self.shape[0] as u64).checked_mul(self.shape[1] as u64)?.checked_mul(4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub blob: String,
    pub blob_len: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Manifest {
    /// Parses and checks a manifest: known format and dtype, unique names,
    /// and tensors tiling `0..blob_len` in order without gaps.
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.dtype != "f32" {
            return Err(Error::Checkpoint(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.blob.is_empty() || self.blob.contains(['/', '\\']) || self.blob == ".." {
            return Err(Error::Checkpoint(format!("blob name {:?} must be a plain file name", self.blob)));
        }
        let mut names = std::collections::HashSet::new();
        let mut expected = 0u64;
        for t in &self.tensors {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
            if t.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor {} starts at byte {} but {} was expected",
                    t.name, t.offset, expected
                )));
            }
            let len = t
                .byte_len()
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} is too large", t.name)))?;
            expected = expected
                .checked_add(len)
                .ok_or_else(|| Error::Checkpoint("blob size overflows".into()))?;
        }
        if expected != self.blob_len {
            return Err(Error::Checkpoint(format!(
                "tensors cover {expected} bytes but blob_len is {}",
                self.blob_len
            )));
        }
        Ok(())
    }
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Array2<f32>)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>) -> Self {
        Self {
            tensors: store.iter().map(|(_, name, v)| (name.to_string(), v.clone())).collect(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Copies every tensor of `store` from this checkpoint. Missing names and
    /// shape mismatches are errors; extra checkpoint tensors are ignored.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let value = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks tensor {name}")))?;
            if value.dim() != store.get(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    value.dim(),
                    store.get(id).dim()
                )));
            }
            store.get_mut(id).assign(value);
        }
        Ok(())
    }

    pub fn encode(&self) -> (Manifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for (name, value) in &self.tensors {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: [value.nrows(), value.ncols()],
                offset: blob.len() as u64,
            });
            for x in value.iter() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            dtype: "f32".into(),
            blob: BLOB_FILE.into(),
            blob_len: blob.len() as u64,
            tensors,
            metadata: self.metadata.clone(),
        };
        (manifest, blob)
    }

    pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        manifest.validate()?;
        if blob.len() as u64 != manifest.blob_len {
            return Err(Error::Checkpoint(format!(
                "blob has {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_len
            )));
        }
        let tensors = manifest
            .tensors
            .iter()
            .map(|t| {
                let start = t.offset as usize;
                let bytes = &blob[start..start + t.byte_len().unwrap() as usize];
                let values = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                let array = Array2::from_shape_vec((t.shape[0], t.shape[1]), values).expect("validated length");
                (t.name.clone(), array)
            })
            .collect();
        Ok(Self {
            tensors,
            metadata: manifest.metadata.clone(),
        })
    }

    /// Writes `manifest.json` and `weights.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.encode();
        let blob_path = dir.join(&manifest.blob);
        fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    }

    /// Loads from a checkpoint directory or a manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = manifest_path(path);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest = Manifest::parse(&text)?;
        let blob_path = manifest_path.with_file_name(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::decode(&manifest, &blob)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}
