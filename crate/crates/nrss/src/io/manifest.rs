//! Run manifest: the materialized configuration, per-sub-run statuses, and a
//! content hash for every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub name: String,
    pub ok: bool,
    /// Error text for failures, empty otherwise.
    #[serde(default)]
    pub detail: String,
    pub wall_time_secs: f64,
}

impl RunStatus {
    pub fn ok(name: impl Into<String>, wall_time_secs: f64) -> Self {
        RunStatus { name: name.into(), ok: true, detail: String::new(), wall_time_secs }
    }

    pub fn failed(name: impl Into<String>, detail: impl Into<String>, wall_time_secs: f64) -> Self {
        RunStatus { name: name.into(), ok: false, detail: detail.into(), wall_time_secs }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub mode: String,
    pub seed: u64,
    pub workers: usize,
    /// The full configuration with every default materialized.
    pub config: serde_json::Value,
    pub statuses: Vec<RunStatus>,
    pub files: Vec<FileEntry>,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn n_succeeded(&self) -> usize {
        self.statuses.iter().filter(|s| s.ok).count()
    }

    pub fn n_failed(&self) -> usize {
        self.statuses.len() - self.n_succeeded()
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Hashes each file (given relative to `dir`) into manifest entries.
pub fn hash_outputs(dir: &Path, names: &[String]) -> Result<Vec<FileEntry>> {
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let full: PathBuf = dir.join(name);
        entries.push(FileEntry { path: name.clone(), sha256: hash_file(&full)? });
    }
    Ok(entries)
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("manifest: {e}")))
}
