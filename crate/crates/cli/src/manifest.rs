use std::collections::BTreeMap;
use std::path::Path;

use hosp_core::data::EmbeddingDataset;
use hosp_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Package version plus the git revision when the build could see one.
pub fn build_id() -> String {
    match option_env!("HOSP_GIT_REV") {
        Some(rev) if !rev.is_empty() => format!("{} {} ({rev})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        _ => format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    /// Hex SHA-256 of the dataset's canonical text form.
    pub fingerprint: String,
}

impl DatasetRef {
    pub fn new(path: &Path, ds: &EmbeddingDataset) -> Self {
        Self {
            path: path.display().to_string(),
            fingerprint: ds.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    /// Keyed by role: `train`, `val`, `test`.
    pub datasets: BTreeMap<String, DatasetRef>,
    pub build: String,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    /// Command-specific settings such as the ablation axis.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &TrainConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            datasets: BTreeMap::new(),
            build: build_id(),
            outputs: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
