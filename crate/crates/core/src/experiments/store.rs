//! Experiment directory layout and stitch checkpoints.
//!
//! ```text
//! <root>/config.resolved.toml
//! <root>/zoo/<model>/                      model checkpoints
//! <root>/matrices/<sender>__<receiver>__<regime>.csv
//! <root>/runs/<sender>__<receiver>__<regime>/<i>_<j>/   one stitch per entry
//! <root>/stats/mse_<scope>.csv
//! <root>/images/<sender>_<i>_<n>.png
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::MatrixRegime;
use crate::checkpoint::{self, CheckpointWriter, TensorEntry, SCHEMA_VERSION};
use crate::config::{BudgetProfile, RunConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stitching::{assemble, assemble_into_input, Stitch, StitchSpec, StitchedNetwork};
use crate::training::{TrainReport, TrainingRegime};
use crate::zoo::ModelHandle;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model(&self, label: &str) -> PathBuf {
        self.root.join("zoo").join(label)
    }

    pub fn zoo_dir(&self) -> PathBuf {
        self.root.join("zoo")
    }

    pub fn matrices_dir(&self) -> PathBuf {
        self.root.join("matrices")
    }

    pub fn matrix_csv(&self, key: &str) -> PathBuf {
        self.matrices_dir().join(format!("{key}.csv"))
    }

    pub fn entry(&self, key: &str, i: usize, j: usize) -> PathBuf {
        self.root.join("runs").join(key).join(format!("{i}_{j}"))
    }

    /// Stitch from point `i` of `sender` into its input space.
    pub fn image_entry(&self, sender: &str, i: usize) -> PathBuf {
        self.root
            .join("runs")
            .join(format!("{sender}__input"))
            .join(i.to_string())
    }

    pub fn stats_dir(&self) -> PathBuf {
        self.root.join("stats")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        checkpoint::write_atomic(&self.root.join(RESOLVED_CONFIG), cfg.to_toml()?.as_bytes())
    }
}

/// Identity of a frozen network inside a stitch manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetRef {
    pub name: String,
    pub digest: String,
}

impl NetRef {
    pub fn of<S: Scalar>(m: &ModelHandle<S>) -> Self {
        Self {
            name: m.label(),
            digest: m.digest(),
        }
    }
}

pub const STITCH_KIND: &str = "stitch";

/// Everything needed to rebuild and re-evaluate one matrix entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryManifest {
    pub schema_version: u32,
    pub kind: String,
    pub sender: NetRef,
    pub i: usize,
    pub receiver: NetRef,
    /// Absent when the stitch feeds the receiver's raw input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    pub spec: StitchSpec,
    pub training: TrainingRegime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_regime: Option<MatrixRegime>,
    pub profile: BudgetProfile,
    pub init_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Set when training failed; the entry is a hole.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainReport>,
    pub params: Vec<TensorEntry>,
}

impl EntryManifest {
    /// Whether this manifest was produced against exactly these networks.
    pub fn matches(&self, sender: &NetRef, receiver: &NetRef) -> bool {
        self.sender == *sender && self.receiver == *receiver
    }
}

/// Reads an entry manifest, `None` if the entry was never completed.
pub fn read_entry(dir: &Path) -> Result<Option<EntryManifest>> {
    if !dir.join(checkpoint::MANIFEST_FILE).exists() {
        return Ok(None);
    }
    let m: EntryManifest = checkpoint::read_manifest(dir)?;
    if m.kind != STITCH_KIND {
        return Err(Error::Argument(format!(
            "{} holds a {:?} checkpoint, not a stitch",
            dir.display(),
            m.kind
        )));
    }
    Ok(Some(m))
}

/// Writes a stitch and its manifest atomically. `manifest.params` is
/// filled in here.
pub fn save_stitch<S: Scalar>(
    dir: &Path,
    stitch: Option<&Stitch<S>>,
    mut manifest: EntryManifest,
) -> Result<()> {
    let writer = CheckpointWriter::new(dir)?;
    manifest.params = match stitch {
        Some(s) => writer.store("params", s.params())?,
        None => Vec::new(),
    };
    writer.commit(&manifest)
}

/// Rebuilds the stitched network of a completed entry against the given
/// frozen networks, which must be the ones it was trained with.
pub fn load_stitched<S: Scalar>(
    dir: &Path,
    sender: Arc<ModelHandle<S>>,
    receiver: Arc<ModelHandle<S>>,
) -> Result<(StitchedNetwork<S>, EntryManifest)> {
    let m = read_entry(dir)?
        .ok_or_else(|| Error::Argument(format!("no stitch checkpoint at {}", dir.display())))?;
    if !m.matches(&NetRef::of(&sender), &NetRef::of(&receiver)) {
        return Err(Error::Argument(format!(
            "stitch at {} was trained between {} and {}, not {} and {}",
            dir.display(),
            m.sender.name,
            m.receiver.name,
            sender.label(),
            receiver.label()
        )));
    }
    let net = rebuild_stitched(dir, &m, sender, receiver)?;
    Ok((net, m))
}

/// Rebuilds from a manifest already matched against the networks.
pub(crate) fn rebuild_stitched<S: Scalar>(
    dir: &Path,
    m: &EntryManifest,
    sender: Arc<ModelHandle<S>>,
    receiver: Arc<ModelHandle<S>>,
) -> Result<StitchedNetwork<S>> {
    if m.params.is_empty() {
        return Err(Error::Argument(format!(
            "entry {} has no trained stitch: {}",
            dir.display(),
            m.error.as_deref().unwrap_or("unknown")
        )));
    }
    let mut params = crate::stitching::build_stitch::<S>(m.spec, 0)
        .params()
        .clone();
    checkpoint::fill_store(dir, &mut params, &m.params)?;
    let stitch = Stitch::from_params(m.spec, params)?;
    match m.j {
        Some(j) => assemble(sender, m.i, receiver, j, stitch),
        None => assemble_into_input(sender, m.i, receiver, stitch),
    }
}

pub(crate) struct EntryContext {
    pub sender: NetRef,
    pub receiver: NetRef,
    pub training: TrainingRegime,
    pub matrix_regime: Option<MatrixRegime>,
    pub profile: BudgetProfile,
}

pub(crate) fn new_manifest<S: Scalar>(
    net: &StitchedNetwork<S>,
    ctx: &EntryContext,
    init_seed: u64,
) -> EntryManifest {
    EntryManifest {
        schema_version: SCHEMA_VERSION,
        kind: STITCH_KIND.into(),
        sender: ctx.sender.clone(),
        i: net.sender_index(),
        receiver: ctx.receiver.clone(),
        j: net.receiver_index(),
        spec: *net.stitch().spec(),
        training: ctx.training,
        matrix_regime: ctx.matrix_regime,
        profile: ctx.profile,
        init_seed,
        accuracy: None,
        error: None,
        report: None,
        params: Vec::new(),
    }
}

/// Writes a CSV file atomically.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::InvariantViolation(format!("csv encoding: {e}"));
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.write_record(r).map_err(enc)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvariantViolation(format!("csv encoding: {e}")))?;
    checkpoint::write_atomic(path, &bytes)
}
