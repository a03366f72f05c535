//! `run.json`: what was run, with which configuration, on which inputs,
//! and the hashes of everything it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use idtrace_core::dataset::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::args::Command;
use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "run.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub tool_version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Working directory the relative paths in `invocation` resolve against.
    pub cwd: PathBuf,
    pub invocation: Command,
    pub config: RunConfig,
    /// Input path → sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<String>,
    pub exit_code: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<serde_json::Value>,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.schema_version != SCHEMA_VERSION {
            anyhow::bail!(
                "{}: manifest schema {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            );
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file under `dir` except the manifest, keyed by its
/// `/`-separated relative path.
pub fn tree_hashes(dir: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir)?;
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if key == MANIFEST_FILE {
            continue;
        }
        out.insert(key, sha256_file(entry.path())?);
    }
    Ok(out)
}

/// sha256 of a file, or of the sorted `path hash` listing of a directory.
pub fn input_hash(path: &Path) -> anyhow::Result<String> {
    if path.is_dir() {
        let mut h = Sha256::new();
        for (k, v) in tree_hashes(path)? {
            h.update(format!("{k} {v}\n"));
        }
        Ok(hex::encode(h.finalize()))
    } else {
        sha256_file(path)
    }
}

/// Output paths whose hashes differ, or that exist on only one side.
pub fn diff_outputs(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
