//! On-disk result store and run manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json   written last; its absence marks an incomplete run
//! config.toml     canonical config of the run
//! tasks/<hash>/   per-sample partial results (resume cache)
//! eigen/ overlaps/ xstats/ rdm/ predictions/ plots/
//! report.md
//! ```
//!
//! Every file is written to a temporary name and renamed into place.
//! Binary eigenvalue files (`*.f64le`) are raw little-endian `f64` arrays.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const STAGE_DIRS: [&str; 6] = ["eigen", "overlaps", "xstats", "rdm", "predictions", "plots"];
pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed: bool,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// Sample tasks that failed twice, with their errors.
    pub failed_tasks: BTreeMap<String, String>,
    pub n_tasks: usize,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest { config_hash, tool_version: TOOL_VERSION.into(), stages: BTreeMap::new(), failed_tasks: BTreeMap::new(), n_tasks: 0, files: Vec::new() }
    }

    pub fn stage_done(&self, stage: &str) -> bool {
        self.stages.get(stage).is_some_and(|s| s.completed)
    }
}

#[derive(Clone, Debug)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        for d in STAGE_DIRS {
            std::fs::create_dir_all(root.join(d))?;
        }
        Ok(ResultStore { root: root.to_owned() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn write_atomic(&self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let dest = self.path(rel);
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = dest.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &dest)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        self.write_atomic(rel, &bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(rel)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn write_f64le(&self, rel: &str, values: &[f64]) -> std::io::Result<()> {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write_atomic(rel, &bytes)
    }

    pub fn read_f64le(&self, rel: &str) -> Option<Vec<f64>> {
        let bytes = std::fs::read(self.path(rel)).ok()?;
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn read_manifest(&self) -> Option<RunManifest> {
        self.read_json(MANIFEST)
    }

    /// Remove the manifest so an interrupted stage leaves the run marked
    /// incomplete.
    pub fn invalidate_manifest(&self) -> std::io::Result<()> {
        match std::fs::remove_file(self.path(MANIFEST)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    /// Refresh the file inventory and write the manifest.
    pub fn write_manifest(&self, m: &mut RunManifest) -> std::io::Result<()> {
        m.files = self.inventory()?;
        self.write_json(MANIFEST, m)
    }

    /// Checksums of every data file, excluding the manifest and task cache.
    pub fn inventory(&self) -> std::io::Result<Vec<FileEntry>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                let rel = p.strip_prefix(&self.root).expect("under root").to_string_lossy().replace('\\', "/");
                if p.is_dir() {
                    if rel != "tasks" {
                        stack.push(p);
                    }
                    continue;
                }
                if rel == MANIFEST || rel.contains(".tmp") {
                    continue;
                }
                let bytes = std::fs::read(&p)?;
                out.push(FileEntry { path: rel, sha256: hex(&Sha256::digest(&bytes)), bytes: bytes.len() as u64 });
            }
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }

    /// Delete everything the store owns under the root.
    pub fn clear(&self) -> std::io::Result<()> {
        for d in STAGE_DIRS.iter().chain(["tasks"].iter()) {
            let p = self.path(d);
            if p.exists() {
                std::fs::remove_dir_all(&p)?;
            }
        }
        for f in [MANIFEST, "config.toml", "report.md"] {
            let p = self.path(f);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        for d in STAGE_DIRS {
            std::fs::create_dir_all(self.path(d))?;
        }
        Ok(())
    }
}
