//! Run manifests: what was run, when, and which files it produced.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_entry(out_dir: &Path, rel: &str) -> CliResult<FileEntry> {
    let path = out_dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(FileEntry {
        path: rel.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex(&Sha256::digest(&bytes)),
    })
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, started_at: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_at,
            finished_at: started_at,
            files: Vec::new(),
        }
    }

    /// Records `files` (relative to `out_dir`) and writes `manifest.json`.
    pub fn finish(mut self, out_dir: &Path, files: &[String]) -> CliResult<Self> {
        self.files = files.iter().map(|f| file_entry(out_dir, f)).collect::<CliResult<_>>()?;
        self.finished_at = unix_now();
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invariant(format!("{}: {e}", path.display())))
    }
}
