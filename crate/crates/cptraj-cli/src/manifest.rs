//! Run manifests: enough metadata to re-run an experiment exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the resolved configuration JSON.
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub tool_version: String,
}

impl Manifest {
    pub fn new(config_json: &str, seed: u64, inputs: Vec<PathBuf>, output_dir: &Path) -> Self {
        Self {
            config_digest: digest(config_json),
            seed,
            inputs,
            output_dir: output_dir.to_path_buf(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Manifests are written before any other output so a crashed run still
    /// identifies itself.
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", out_dir.display())))?;
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, format!("{json}\n"))
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }
}

pub fn digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let bytes = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in bytes {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
