//! Checkpoint files: a JSON manifest (`<stem>.json`) naming each tensor and
//! its shape in storage order, and a blob (`<stem>.bin`) of little-endian
//! `f32` values concatenated in the same order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hopqa-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn to_tensor<F: Real>(&self, trainable: bool) -> Result<Tensor<F>> {
        let data = self.data.iter().map(|&v| F::lit(v as f64)).collect();
        if trainable {
            Tensor::param(data, &self.shape)
        } else {
            Tensor::new(data, &self.shape)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<StoredTensor>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

impl Checkpoint {
    pub fn push<F: Real>(&mut self, name: impl Into<String>, t: &Tensor<F>) {
        self.tensors.push(StoredTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    pub fn from_named<F: Real>(named: &[(String, Tensor<F>)]) -> Self {
        let mut c = Checkpoint::default();
        for (n, t) in named {
            c.push(n.clone(), t);
        }
        c
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            dtype: "f32-le".into(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let mut blob = Vec::with_capacity(self.tensors.iter().map(|t| t.data.len() * 4).sum());
        for t in &self.tensors {
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mpath = manifest_path(stem);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        let bpath = blob_path(stem);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mpath = manifest_path(stem);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: mpath.clone(),
            detail: e.to_string(),
        })?;
        if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f32-le" {
            return Err(Error::Parse {
                path: mpath,
                detail: format!(
                    "unsupported checkpoint {} v{} ({})",
                    manifest.format, manifest.version, manifest.dtype
                ),
            });
        }
        let bpath = blob_path(stem);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let expected: usize = manifest
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 4)
            .sum();
        if blob.len() != expected {
            return Err(Error::Parse {
                path: bpath,
                detail: format!("blob holds {} bytes, manifest needs {expected}", blob.len()),
            });
        }
        let mut offset = 0;
        let tensors = manifest
            .tensors
            .into_iter()
            .map(|e| {
                let n: usize = e.shape.iter().product();
                let data = blob[offset..offset + 4 * n]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                offset += 4 * n;
                StoredTensor {
                    name: e.name,
                    shape: e.shape,
                    data,
                }
            })
            .collect();
        Ok(Checkpoint {
            tensors,
            meta: manifest.meta,
        })
    }
}
