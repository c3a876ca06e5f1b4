//! Run configuration: a flat, human-writable TOML document with typed
//! sections. A run directory always receives the canonical serialization of
//! its config before any work starts, and every artifact carries that
//! config's content hash, so a run is reproducible from its copied config
//! alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::DatasetSpec;
use crate::error::{Error, Result};
use crate::io_util;
use crate::it_mtl::RunMode;
use crate::mechanisms::GradientCandidate;
use crate::net::{ModelSpec, OptimizerInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub mode: RunMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Candidate ids for the it-mtl modes; ignored by plain and measure.
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Dataset source: a `.mtds` file or an inline generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSection {
    Path { path: PathBuf },
    Inline(DatasetSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    /// Dense-network structure; required for tabular datasets, rejected for
    /// random-quadratic suites (their losses are closed-form).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub optimizer: OptimizerInit,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = io_util::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text, path)?;
        // Dataset paths resolve against the config file's directory so a
        // copied config replays from anywhere.
        if let DatasetSection::Path { path: data } = &mut config.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(config)
    }

    /// Canonical serialization: what run directories store and what the
    /// content hash covers. The delivery location (`out_dir`) is not part
    /// of the experiment's identity and is stripped.
    pub fn canonical_toml(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.run.out_dir = None;
        toml::to_string(&canonical)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical_toml()?.as_bytes()))
    }

    pub fn parsed_candidates(&self) -> Result<Vec<GradientCandidate>> {
        self.run.candidates.iter().map(|id| GradientCandidate::parse(id)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.batch_size == 0 {
            return Err(Error::Config("run.batch_size must be >= 1".into()));
        }
        let candidates = self.parsed_candidates()?;
        match self.run.mode {
            RunMode::ItMtlExact | RunMode::ItMtlFirstOrder => {
                if candidates.is_empty() {
                    return Err(Error::Config(format!(
                        "mode {:?} needs at least one candidate id",
                        self.run.mode
                    )));
                }
            }
            RunMode::Plain | RunMode::Measure => {}
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a standalone dataset spec file: a TOML document with a single
/// `[dataset]` table.
pub fn dataset_spec_from_path(path: &Path) -> Result<DatasetSpec> {
    #[derive(Deserialize)]
    struct SpecDoc {
        dataset: DatasetSpec,
    }
    let text = io_util::read_to_string(path)?;
    let doc: SpecDoc = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(doc.dataset)
}
