use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// sha256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Checkpoint path relative to the run directory.
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub env_steps: u64,
    /// Checkpoint the stage started from, if any.
    pub parent: Option<PathBuf>,
    /// Digest of the frozen hand policy (glove stage).
    pub frozen_digest: Option<String>,
}

/// Provenance of everything under a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub run_id: String,
    pub config_digest: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// Artifact path (relative to the run directory) to sha256.
    pub artifacts: BTreeMap<PathBuf, String>,
    /// Seconds since the Unix epoch at which each stage finished.
    pub timestamps: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(run_id: &str, config_digest: &str) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA,
            run_id: run_id.to_string(),
            config_digest: config_digest.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timestamps: BTreeMap::new(),
        }
    }

    /// Existing manifest of `run_dir`, or a fresh one. A manifest written
    /// under a different config is refused.
    pub fn open(run_dir: &Path, run_id: &str, config_digest: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(run_id, config_digest));
        }
        let m = Self::load(&path)?;
        if m.config_digest != config_digest {
            return Err(Error::config(format!(
                "{} was produced by a different config ({}), use another run id or output directory",
                run_dir.display(),
                m.config_digest
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::validation(format!("unsupported manifest schema {}", m.schema)));
        }
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Records (or refreshes) the digest of an artifact.
    pub fn add_artifact(&mut self, run_dir: &Path, rel: impl Into<PathBuf>) -> Result<()> {
        let rel = rel.into();
        let digest = file_digest(&run_dir.join(&rel))?;
        self.artifacts.insert(rel, digest);
        Ok(())
    }

    pub fn add_stage(&mut self, name: &str, record: StageRecord) {
        self.stages.insert(name.to_string(), record);
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.timestamps.insert(name.to_string(), now);
    }

    /// Checks that every listed artifact exists with its recorded digest and
    /// that stage checkpoints are listed.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (rel, expected) in &self.artifacts {
            let found = file_digest(&run_dir.join(rel))?;
            if &found != expected {
                return Err(Error::validation(format!("{} changed since it was recorded", rel.display())));
            }
        }
        for (name, s) in &self.stages {
            if !self.artifacts.contains_key(&s.checkpoint) {
                return Err(Error::validation(format!("stage {name} checkpoint is not a listed artifact")));
            }
        }
        Ok(())
    }

    /// JSON without timestamps; equal across reruns of the same config.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut m = self.clone();
        m.timestamps.clear();
        Ok(serde_json::to_string_pretty(&m)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), "{}").unwrap();
        let mut m = RunManifest::new("r", "abc");
        m.add_artifact(dir.path(), "a.json").unwrap();
        m.add_stage(
            "prior",
            StageRecord {
                checkpoint: "a.json".into(),
                seed: 1,
                env_steps: 0,
                parent: None,
                frozen_digest: None,
            },
        );
        m.verify(dir.path()).unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), "r", "abc").unwrap();
        assert_eq!(back, m);
        assert!(RunManifest::open(dir.path(), "r", "other").is_err());
        std::fs::write(dir.path().join("a.json"), "{ }").unwrap();
        assert!(matches!(m.verify(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn deterministic_form_drops_timestamps() {
        let mut a = RunManifest::new("r", "abc");
        let mut b = a.clone();
        a.timestamps.insert("prior".into(), 1);
        b.timestamps.insert("prior".into(), 2);
        assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap());
    }
}
