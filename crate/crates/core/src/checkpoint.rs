//! On-disk checkpoint directories: a TOML manifest plus one raw
//! little-endian `f32` file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::TensorStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Path relative to the checkpoint directory.
    pub file: String,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(format!("creating {}", parent.display())))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(Error::io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(Error::io(format!("renaming to {}", path.display())))
}

fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(Error::io(format!("writing {}", path.display())))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(Error::io(format!("reading {}", path.display())))?;
    if bytes.len() != expected * 4 {
        return Err(Error::shape(
            format!("tensor file {}", path.display()),
            expected * 4,
            bytes.len(),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Stages a checkpoint in a sibling temporary directory; [`commit`](Self::commit)
/// renames it into place.
pub struct CheckpointWriter {
    target: PathBuf,
    staging: PathBuf,
}

impl CheckpointWriter {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = target.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(Error::io(format!("creating {}", parent.display())))?;
        let name = target
            .file_name()
            .ok_or_else(|| {
                Error::Argument(format!(
                    "checkpoint path {} has no file name",
                    target.display()
                ))
            })?
            .to_string_lossy();
        let staging = parent.join(format!(".{name}.staging{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)
                .map_err(Error::io(format!("clearing {}", staging.display())))?;
        }
        fs::create_dir_all(&staging)
            .map_err(Error::io(format!("creating {}", staging.display())))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
        })
    }

    pub fn tensor<S: Scalar>(&self, group: &str, name: &str, t: &Tensor<S>) -> Result<TensorEntry> {
        let file = format!("{group}/{name}.f32");
        let path = self.staging.join(&file);
        fs::create_dir_all(path.parent().expect("group dir"))
            .map_err(Error::io("creating tensor group"))?;
        let data: Vec<f32> = t.data().iter().map(|v| v.to_f32_lossy()).collect();
        write_f32(&path, &data)?;
        Ok(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            file,
        })
    }

    pub fn store<S: Scalar>(
        &self,
        group: &str,
        store: &TensorStore<S>,
    ) -> Result<Vec<TensorEntry>> {
        store
            .iter()
            .map(|(name, t)| self.tensor(group, name, t))
            .collect()
    }

    pub fn file(&self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.staging.join(name), bytes).map_err(Error::io(format!("writing {name}")))
    }

    pub fn commit<M: Serialize>(self, manifest: &M) -> Result<()> {
        let text = toml::to_string_pretty(manifest)
            .map_err(|e| Error::InvariantViolation(format!("manifest serialization: {e}")))?;
        self.file(MANIFEST_FILE, text.as_bytes())?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)
                .map_err(Error::io(format!("replacing {}", self.target.display())))?;
        }
        fs::rename(&self.staging, &self.target)
            .map_err(Error::io(format!("committing {}", self.target.display())))
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// Reads and version-checks a manifest.
pub fn read_manifest<M: DeserializeOwned>(dir: &Path) -> Result<M> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(Error::io(format!("reading manifest {}", path.display())))?;
    let parse_err = |e: toml::de::Error| Error::Parse {
        what: path.display().to_string(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].lines().count().max(1) as u64),
        reason: e.message().to_string(),
    };
    let probe: VersionProbe = toml::from_str(&text).map_err(parse_err)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(Error::Incompatible {
            path,
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    toml::from_str(&text).map_err(parse_err)
}

pub fn read_tensor<S: Scalar>(dir: &Path, entry: &TensorEntry) -> Result<Tensor<S>> {
    let n = entry.shape.iter().product();
    let data = read_f32(&dir.join(&entry.file), n)?;
    Tensor::from_vec(
        &entry.shape,
        data.into_iter().map(<S as Scalar>::from_f32).collect(),
    )
}

/// Overwrites every tensor of `store` from the entries, matching by name
/// and checking shapes.
pub fn fill_store<S: Scalar>(
    dir: &Path,
    store: &mut TensorStore<S>,
    entries: &[TensorEntry],
) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::shape(
            format!("tensor count in {}", dir.display()),
            store.len(),
            entries.len(),
        ));
    }
    for entry in entries {
        let id = store.find(&entry.name).ok_or_else(|| {
            Error::Argument(format!(
                "unexpected tensor {} in {}",
                entry.name,
                dir.display()
            ))
        })?;
        let t = read_tensor::<S>(dir, entry)?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::shape(
                format!("tensor {}", entry.name),
                store.get(id).shape(),
                t.shape(),
            ));
        }
        *store.get_mut(id) = t;
    }
    Ok(())
}
