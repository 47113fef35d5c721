//! Run manifests written next to every artifact.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use hno_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Resolved configuration of the command.
    pub config: serde_json::Value,
    /// SHA-256 of every dataset file read or written, keyed by path.
    pub dataset_hashes: BTreeMap<String, String>,
    pub code_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], seed: u64, threads: Option<usize>) -> Self {
        RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            config: serde_json::Value::Null,
            dataset_hashes: BTreeMap::new(),
            code_version: format!(
                "hno {} / solver {}",
                env!("CARGO_PKG_VERSION"),
                hno_core::pde::SOLVER_VERSION
            ),
            seed,
            threads,
            outputs: Vec::new(),
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
        }
    }

    pub fn hash_dataset(&mut self, path: &Path) -> Result<()> {
        self.dataset_hashes
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix_s = unix_now();
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)?,
        )?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(Error::from)
    }
}
