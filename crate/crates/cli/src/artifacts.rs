//! Artifact plumbing: every pipeline output is written next to a JSON
//! manifest recording the stage key (a content hash of the stage's config
//! and inputs), the seeds in play, and a timestamp. A stage whose key
//! matches the manifest on disk is skipped and its artifact reused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Sidecar metadata written with each artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Stage that produced the artifact.
    pub stage: String,
    /// Hex key hashing the stage config and all input hashes; recomputable
    /// from the config alone, so a stale artifact is detectable.
    pub config_hash: String,
    /// Hex content hashes of the inputs, in stage-declared order.
    pub inputs: Vec<String>,
    /// Seeds the stage consumed, keyed by role.
    pub seeds: BTreeMap<String, u64>,
    /// Unix timestamp of the write.
    pub created_unix: u64,
    /// Crate version that wrote the artifact.
    pub version: String,
}

fn to_hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a byte string.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    to_hex(&hasher.finalize())
}

/// Hex SHA-256 of a file's contents.
pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hash_bytes(&bytes))
}

/// The cache key for one stage: a hash over the stage name, its canonical
/// config string, and its input hashes. Any change to any part changes the
/// key; unrelated config edits leave it untouched.
pub fn stage_key(stage: &str, canon: &str, inputs: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    hasher.update([0]);
    hasher.update(canon.as_bytes());
    for input in inputs {
        hasher.update([0]);
        hasher.update(input.as_bytes());
    }
    to_hex(&hasher.finalize())
}

/// Path of the manifest that belongs to `artifact`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    artifact.with_file_name(name)
}

/// Loads and parses an artifact's manifest.
pub fn read_manifest(artifact: &Path) -> Result<Manifest, CliError> {
    let path = manifest_path(artifact);
    let content = crate::read_file(&path)?;
    serde_json::from_str(&content)
        .map_err(|e| CliError::Artifact(format!("{}: bad manifest: {e}", path.display())))
}

/// True when the artifact exists and its manifest carries this exact key.
pub fn is_cached(artifact: &Path, key: &str) -> bool {
    artifact.exists()
        && read_manifest(artifact)
            .map(|m| m.config_hash == key)
            .unwrap_or(false)
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes an artifact and its manifest; parent directories are created.
pub fn write_artifact(
    artifact: &Path,
    content: &str,
    stage: &str,
    key: &str,
    inputs: &[&str],
    seeds: &BTreeMap<String, u64>,
) -> Result<(), CliError> {
    if let Some(parent) = artifact.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    crate::write_file(artifact, content)?;
    let manifest = Manifest {
        stage: stage.to_string(),
        config_hash: key.to_string(),
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        seeds: seeds.clone(),
        created_unix: now_unix(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Artifact(format!("manifest serialization: {e}")))?;
    crate::write_file(&manifest_path(artifact), &json)
}
