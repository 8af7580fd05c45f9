//! Run directories: a JSON manifest written before any work starts and a
//! completion marker written after it finishes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPLETE_FILE: &str = "COMPLETE";
pub const METRICS_FILE: &str = "metrics.csv";

/// Description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the run (`synth`, `theory`, `fed`).
    pub command: String,
    /// The resolved configuration, as a document `RunConfig::parse` accepts
    /// (for `theory`: the study parameters).
    pub config: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    /// Artifacts relative to the run directory.
    pub outputs: Vec<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: String, seed: u64, outputs: &[&str]) -> Self {
        Self {
            command: command.to_string(),
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// An output directory holding one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Creates the directory, clears a stale completion marker and writes the
    /// manifest.
    pub fn begin(path: impl AsRef<Path>, manifest: RunManifest) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let marker = path.join(COMPLETE_FILE);
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        let dir = Self { path, manifest };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write_manifest(&self) -> Result<()> {
        let target = self.file(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::invalid(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(&target, text + "\n").map_err(|e| Error::io(&target, e))
    }

    /// Stamps the end time and writes the completion marker.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_unix_ms = Some(now_ms());
        self.write_manifest()?;
        let marker = self.file(COMPLETE_FILE);
        std::fs::write(&marker, "").map_err(|e| Error::io(&marker, e))?;
        Ok(self.manifest)
    }
}

/// Whether `dir` holds a finished run.
pub fn is_complete(dir: impl AsRef<Path>) -> bool {
    dir.as_ref().join(COMPLETE_FILE).is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_only_after_finish() {
        let tmp = tempfile::tempdir().unwrap();
        let m = RunManifest::new("fed", "seed = 1\n".into(), 1, &[METRICS_FILE]);
        let dir = RunDir::begin(tmp.path().join("run"), m.clone()).unwrap();
        assert!(!is_complete(&dir.path));
        let on_disk = RunManifest::load(dir.file(MANIFEST_FILE)).unwrap();
        assert_eq!(on_disk, m);
        let path = dir.path.clone();
        let done = dir.finish().unwrap();
        assert!(is_complete(&path));
        assert!(done.finished_unix_ms.is_some());
        assert_eq!(RunManifest::load(path.join(MANIFEST_FILE)).unwrap(), done);

        RunDir::begin(&path, m).unwrap();
        assert!(!is_complete(&path));
    }
}
