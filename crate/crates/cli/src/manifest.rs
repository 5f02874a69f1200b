//! Run manifests and atomic output writing.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Sidecar path of an output: `trace.csv` → `trace.csv.manifest.toml`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.toml");
    out.with_file_name(name)
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Everything needed to trace an output file back to what produced it.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<C: Serialize, D: Serialize, R: Serialize> {
    pub command: String,
    pub tool_version: String,
    pub timestamps: Timestamps,
    pub config: C,
    pub data: D,
    pub result: R,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl<C: Serialize, D: Serialize, R: Serialize> RunManifest<C, D, R> {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Numeric(format!("cannot encode manifest: {e}")))
    }
}

fn stage(path: &Path, bytes: &[u8]) -> CliResult<NamedTempFile> {
    let out_err = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(out_err)?;
    tmp.write_all(bytes).map_err(out_err)?;
    tmp.as_file().sync_all().map_err(out_err)?;
    Ok(tmp)
}

/// Writes every file to a temporary sibling first and renames only after all
/// of them were staged, so a failure leaves no partial outputs behind.
pub fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> CliResult<()> {
    let staged = files
        .iter()
        .map(|(path, bytes)| stage(path, bytes).map(|t| (path, t)))
        .collect::<CliResult<Vec<_>>>()?;
    for (path, tmp) in staged {
        tmp.persist(path).map_err(|e| CliError::Output {
            path: path.clone(),
            source: e.error,
        })?;
    }
    Ok(())
}
