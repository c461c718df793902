//! Run configuration: budget profiles and layered settings.
//!
//! Sources are merged field by field, later layers winning: defaults,
//! then a TOML file, then environment variables, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10, make_synthetic, DataSource, DatasetSplit, SplitRole};
use crate::error::{Error, Result};
use crate::experiments::MatrixRegime;
use crate::training::mix_seed;
use crate::zoo::{enumerate_archs, ArchSpec};

pub const ENV_DATA_ROOT: &str = "STITCHLAB_DATA_ROOT";
pub const ENV_OUT: &str = "STITCHLAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetProfile {
    /// Full CIFAR-10 and the published epoch counts.
    Paper,
    /// At most two architectures on a quarter of the training set.
    Desk,
    /// Small synthetic data, one epoch everywhere.
    Smoke,
}

impl BudgetProfile {
    pub fn as_str(&self) -> &'static str {
        match self {
            BudgetProfile::Paper => "paper",
            BudgetProfile::Desk => "desk",
            BudgetProfile::Smoke => "smoke",
        }
    }

    pub fn settings(&self) -> ProfileSettings {
        let full = ProfileSettings {
            source: DataSource::Cifar10,
            train_fraction: 1.0,
            train_examples: None,
            test_examples: None,
            zoo_epochs: ZOO_EPOCHS,
            vanilla_epochs: 4,
            similarity_epochs: 30,
            batch_size: 256,
            max_archs: None,
        };
        match self {
            BudgetProfile::Paper => full,
            BudgetProfile::Desk => ProfileSettings {
                train_fraction: 0.25,
                max_archs: Some(2),
                ..full
            },
            BudgetProfile::Smoke => ProfileSettings {
                source: DataSource::Synthetic,
                train_examples: Some(400),
                test_examples: Some(100),
                zoo_epochs: 1,
                vanilla_epochs: 1,
                similarity_epochs: 1,
                batch_size: 8,
                ..full
            },
        }
    }

    fn default_archs(&self) -> Vec<ArchSpec> {
        let parse = |s: &str| s.parse::<ArchSpec>().expect("valid arch");
        match self {
            BudgetProfile::Paper => enumerate_archs(),
            BudgetProfile::Desk => vec![parse("R1111"), parse("R2222")],
            BudgetProfile::Smoke => vec![parse("R1111")],
        }
    }
}

impl fmt::Display for BudgetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BudgetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(BudgetProfile::Paper),
            "desk" => Ok(BudgetProfile::Desk),
            "smoke" => Ok(BudgetProfile::Smoke),
            _ => Err(Error::Argument(format!(
                "unknown profile {s:?}; expected paper, desk or smoke"
            ))),
        }
    }
}

/// Zoo epochs for the full-scale profiles; the zoo's training length is not
/// published, so this is a choice.
pub const ZOO_EPOCHS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSettings {
    pub source: DataSource,
    pub train_fraction: f64,
    /// Caps applied after the fraction.
    pub train_examples: Option<usize>,
    pub test_examples: Option<usize>,
    pub zoo_epochs: usize,
    pub vanilla_epochs: usize,
    pub similarity_epochs: usize,
    pub batch_size: usize,
    pub max_archs: Option<usize>,
}

/// Per-run adjustments of a profile's settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_examples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_examples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zoo_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vanilla_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity_epochs: Option<usize>,
}

impl BudgetOverrides {
    fn layer(self, over: Self) -> Self {
        Self {
            train_examples: over.train_examples.or(self.train_examples),
            test_examples: over.test_examples.or(self.test_examples),
            batch_size: over.batch_size.or(self.batch_size),
            zoo_epochs: over.zoo_epochs.or(self.zoo_epochs),
            vanilla_epochs: over.vanilla_epochs.or(self.vanilla_epochs),
            similarity_epochs: over.similarity_epochs.or(self.similarity_epochs),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    #[default]
    Cpu,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
    pub profile: BudgetProfile,
    pub seed: u64,
    pub device: Device,
    /// Matrix entries trained concurrently.
    pub threads: usize,
    pub archs: Vec<ArchSpec>,
    pub regimes: Vec<MatrixRegime>,
    pub images_per_point: usize,
    pub budget: BudgetOverrides,
}

/// One configuration layer; unset fields fall through to lower layers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub profile: Option<BudgetProfile>,
    pub seed: Option<u64>,
    pub device: Option<Device>,
    pub threads: Option<usize>,
    pub archs: Option<Vec<ArchSpec>>,
    pub regimes: Option<Vec<MatrixRegime>>,
    pub images_per_point: Option<usize>,
    #[serde(default)]
    pub budget: BudgetOverrides,
}

impl PartialConfig {
    pub fn from_toml_str(text: &str, what: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: what.to_string(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].lines().count().max(1) as u64),
            reason: e.message().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(Error::io(format!("reading config {}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// The environment layer; `lookup` is normally `std::env::var`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Self {
        Self {
            data_root: lookup(ENV_DATA_ROOT)
                .filter(|s| !s.is_empty())
                .map(PathBuf::from),
            out: lookup(ENV_OUT).filter(|s| !s.is_empty()).map(PathBuf::from),
            ..Self::default()
        }
    }

    /// Field-wise merge where `over` wins.
    pub fn layer(self, over: Self) -> Self {
        Self {
            data_root: over.data_root.or(self.data_root),
            out: over.out.or(self.out),
            profile: over.profile.or(self.profile),
            seed: over.seed.or(self.seed),
            device: over.device.or(self.device),
            threads: over.threads.or(self.threads),
            archs: over.archs.or(self.archs),
            regimes: over.regimes.or(self.regimes),
            images_per_point: over.images_per_point.or(self.images_per_point),
            budget: self.budget.layer(over.budget),
        }
    }

    /// Fills defaults and validates.
    pub fn resolve(self) -> Result<RunConfig> {
        let profile = self.profile.unwrap_or(BudgetProfile::Paper);
        let cfg = RunConfig {
            data_root: self.data_root,
            out: self.out.unwrap_or_else(|| PathBuf::from("experiments")),
            profile,
            seed: self.seed.unwrap_or(0),
            device: self.device.unwrap_or_default(),
            threads: self.threads.unwrap_or(1),
            archs: self.archs.unwrap_or_else(|| profile.default_archs()),
            regimes: self.regimes.unwrap_or_else(|| MatrixRegime::ALL.to_vec()),
            images_per_point: self.images_per_point.unwrap_or(8),
            budget: self.budget,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Offset between trained-instance seeds and random-control seeds.
pub const CONTROL_SEED_OFFSET: u64 = 1000;

impl RunConfig {
    /// Structural checks that need no file system access.
    pub fn validate(&self) -> Result<()> {
        if self.archs.is_empty() {
            return Err(Error::Argument(
                "at least one architecture is required".into(),
            ));
        }
        let mut seen = self.archs.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.archs.len() {
            return Err(Error::Argument(
                "architecture list contains duplicates".into(),
            ));
        }
        if self.regimes.is_empty() {
            return Err(Error::Argument("at least one regime is required".into()));
        }
        if self.threads == 0 {
            return Err(Error::Argument("threads must be at least 1".into()));
        }
        let s = self.settings();
        if let Some(max) = s.max_archs {
            if self.archs.len() > max {
                return Err(Error::Argument(format!(
                    "the {} profile allows at most {max} architectures, got {}",
                    self.profile,
                    self.archs.len()
                )));
            }
        }
        for (name, v) in [
            ("batch_size", s.batch_size),
            ("zoo_epochs", s.zoo_epochs),
            ("vanilla_epochs", s.vanilla_epochs),
            ("similarity_epochs", s.similarity_epochs),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        if s.train_examples == Some(0) || s.test_examples == Some(0) {
            return Err(Error::Argument("example counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Profile settings with this run's overrides applied.
    pub fn settings(&self) -> ProfileSettings {
        let mut s = self.profile.settings();
        let b = &self.budget;
        s.train_examples = b.train_examples.or(s.train_examples);
        s.test_examples = b.test_examples.or(s.test_examples);
        s.batch_size = b.batch_size.unwrap_or(s.batch_size);
        s.zoo_epochs = b.zoo_epochs.unwrap_or(s.zoo_epochs);
        s.vanilla_epochs = b.vanilla_epochs.unwrap_or(s.vanilla_epochs);
        s.similarity_epochs = b.similarity_epochs.unwrap_or(s.similarity_epochs);
        s
    }

    /// Checks that the data this run reads is present.
    pub fn require_data(&self) -> Result<()> {
        if self.settings().source != DataSource::Cifar10 {
            return Ok(());
        }
        let root = self.data_root.as_ref().ok_or_else(|| Error::Ingestion {
            path: PathBuf::new(),
            reason: format!(
                "the {} profile reads CIFAR-10; set --data-root or {ENV_DATA_ROOT}",
                self.profile
            ),
        })?;
        if !root.is_dir() {
            return Err(Error::Ingestion {
                path: root.clone(),
                reason: "data root is not a directory".into(),
            });
        }
        Ok(())
    }

    /// Training and test splits for this profile.
    pub fn load_data(&self) -> Result<(DatasetSplit, DatasetSplit)> {
        self.require_data()?;
        let s = self.settings();
        let (train, test) = match s.source {
            DataSource::Cifar10 => {
                let root = self.data_root.as_deref().expect("checked by require_data");
                (
                    load_cifar10(root, SplitRole::Train)?.fraction(s.train_fraction)?,
                    load_cifar10(root, SplitRole::Test)?,
                )
            }
            DataSource::Synthetic => {
                let n_train = s.train_examples.unwrap_or(400);
                let n_test = s.test_examples.unwrap_or(100);
                (
                    make_synthetic(n_train, mix_seed(&[self.seed, 1]))?,
                    make_synthetic(n_test, mix_seed(&[self.seed, 2]))?.with_role(SplitRole::Test),
                )
            }
        };
        let train = s.train_examples.map_or(train.clone(), |n| train.take(n));
        let test = s.test_examples.map_or(test.clone(), |n| test.take(n));
        Ok((train, test))
    }

    /// Seeds of the two trained instances per architecture: sender, receiver.
    pub fn instance_seeds(&self) -> [u64; 2] {
        [self.seed, self.seed + 1]
    }

    pub fn control_seeds(&self) -> [u64; 2] {
        [
            self.seed + CONTROL_SEED_OFFSET,
            self.seed + CONTROL_SEED_OFFSET + 1,
        ]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvariantViolation(format!("config serialization: {e}")))
    }
}
