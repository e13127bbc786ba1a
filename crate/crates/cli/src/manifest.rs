//! Run manifest: per-stage output hashes, config snapshots, and seeds, so a
//! finished run directory is self-describing and tamper-evident.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created_at: String,
    pub updated_at: String,
    pub master_seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub config: serde_json::Value,
    /// Relative path -> hex SHA-256 of the file content.
    pub outputs: BTreeMap<String, String>,
    pub completed_at: String,
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::runtime(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::runtime(format!("read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

impl RunManifest {
    pub fn new(master_seed: u64) -> Self {
        let now = chrono::Utc::now().to_rfc3339();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: now.clone(),
            updated_at: now,
            master_seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| CliError::dependency(format!("no manifest at {}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::runtime(format!("corrupt manifest: {e}")))
    }

    pub fn load_or_new(dir: &Path, master_seed: u64) -> Result<Self, CliError> {
        if dir.join(MANIFEST_FILE).exists() {
            Self::load(dir)
        } else {
            Ok(Self::new(master_seed))
        }
    }

    pub fn save(&mut self, dir: &Path) -> Result<(), CliError> {
        self.updated_at = chrono::Utc::now().to_rfc3339();
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("create {}: {e}", dir.display())))?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("serialize manifest: {e}")))?;
        std::fs::write(dir.join(MANIFEST_FILE), json)
            .map_err(|e| CliError::runtime(format!("write manifest: {e}")))?;
        Ok(())
    }

    /// Record a completed stage, hashing every output file (paths relative
    /// to the run dir).
    pub fn record_stage(
        &mut self,
        dir: &Path,
        name: &str,
        config: serde_json::Value,
        outputs: &[&str],
    ) -> Result<(), CliError> {
        let mut hashed = BTreeMap::new();
        for rel in outputs {
            hashed.insert((*rel).to_string(), file_sha256(&dir.join(rel))?);
        }
        self.stages.insert(
            name.to_string(),
            StageRecord {
                config,
                outputs: hashed,
                completed_at: chrono::Utc::now().to_rfc3339(),
            },
        );
        Ok(())
    }

    /// The stage must exist; missing stages are dependency errors (exit 3).
    pub fn require_stage(&self, name: &str) -> Result<&StageRecord, CliError> {
        self.stages.get(name).ok_or_else(|| {
            CliError::dependency(format!(
                "stage `{name}` has not run in this directory; run it first"
            ))
        })
    }

    /// Verify a recorded output against its stored hash and return its
    /// absolute path. A mismatch means the file was modified after the
    /// producing stage ran.
    pub fn verified_path(&self, dir: &Path, stage: &str, rel: &str) -> Result<PathBuf, CliError> {
        let record = self.require_stage(stage)?;
        let expected = record.outputs.get(rel).ok_or_else(|| {
            CliError::dependency(format!("stage `{stage}` did not record output `{rel}`"))
        })?;
        let path = dir.join(rel);
        let actual = file_sha256(&path)?;
        if &actual != expected {
            return Err(CliError::dependency(format!(
                "{rel} does not match the hash recorded by stage `{stage}` (file was modified)"
            )));
        }
        Ok(path)
    }
}

/// Exclusive ownership of a run directory for the process lifetime.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::runtime(
                format!("run directory is locked by another process ({})", path.display()),
            )),
            Err(e) => Err(CliError::runtime(format!("lock {}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "step,loss\n1,2.0\n").unwrap();
        let mut m = RunManifest::new(7);
        m.record_stage(dir.path(), "train", serde_json::json!({"steps": 10}), &["a.csv"])
            .unwrap();
        m.save(dir.path()).unwrap();

        let m = RunManifest::load(dir.path()).unwrap();
        assert!(m.verified_path(dir.path(), "train", "a.csv").is_ok());
        assert!(m.require_stage("missing").is_err());

        // tamper
        std::fs::write(dir.path().join("a.csv"), "step,loss\n1,9.9\n").unwrap();
        let err = m.verified_path(dir.path(), "train", "a.csv").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
