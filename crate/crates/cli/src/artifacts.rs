//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub rows_loaded: usize,
    pub rows_used: usize,
    pub normal: usize,
    pub attack: usize,
    pub split_rows: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEntry {
    /// Subdirectory holding this pipeline's artifacts; empty for the root.
    pub dir: String,
    /// `pca`, `heuristic` or `llm`.
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisor_fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub dataset: DatasetInfo,
    pub pipelines: Vec<PipelineEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Relative path -> sha256 of every file written by the run.
    pub artifacts: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes files under one root and remembers their hashes.
pub struct Artifacts {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        Ok(Artifacts { root: root.to_path_buf(), written: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&mut self, rel: &str, content: &str) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
        }
        std::fs::write(&path, content).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.written.insert(rel.to_string(), sha256_hex(content.as_bytes()));
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::config(format!("serializing {rel}: {e}")))?;
        s.push('\n');
        self.write_text(rel, &s)
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        manifest.artifacts = std::mem::take(&mut self.written);
        self.write_json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}
