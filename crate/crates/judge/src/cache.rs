//! Content-addressed annotation cache: one JSONL file, keyed by
//! `sha256(model, attribute, text)`. The key never includes credentials and
//! entries never include the annotated text.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::protocol::{Attribute, JudgeAnnotation};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    spans: Vec<String>,
    count: usize,
}

pub struct AnnotationCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, JudgeAnnotation>>,
}

pub fn cache_key(model: &str, attribute: Attribute, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0x1f]);
    hasher.update(match attribute {
        Attribute::Race => b"race".as_slice(),
        Attribute::Body => b"body".as_slice(),
    });
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl AnnotationCache {
    /// Opens (or creates) `cache.jsonl` under `dir` and loads all entries.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("cache.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line)?;
                entries.insert(
                    entry.key,
                    JudgeAnnotation {
                        count: entry.count,
                        spans: entry.spans,
                    },
                );
            }
        }
        Ok(Self {
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, key: &str) -> Option<JudgeAnnotation> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    /// Insert and append to disk; writes are serialized through the lock.
    pub fn put(&self, key: String, annotation: &JudgeAnnotation) -> Result<()> {
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(&key) {
            return Ok(());
        }
        let line = serde_json::to_string(&CacheEntry {
            key: key.clone(),
            spans: annotation.spans.clone(),
            count: annotation.count,
        })?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{line}")?;
        entries.insert(key, annotation.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cache = AnnotationCache::open(dir.path()).unwrap();
        let ann = JudgeAnnotation::from_spans(vec!["tall".into(), "stout".into()]);
        let key = cache_key("mock-1", Attribute::Race, "a tall stout person");
        cache.put(key.clone(), &ann).unwrap();

        let reloaded = AnnotationCache::open(dir.path()).unwrap();
        assert_eq!(reloaded.len(), 1);
        assert_eq!(reloaded.get(&key), Some(ann));
    }

    #[test]
    fn key_depends_on_model_attribute_and_text() {
        let a = cache_key("m1", Attribute::Race, "text");
        assert_ne!(a, cache_key("m2", Attribute::Race, "text"));
        assert_ne!(a, cache_key("m1", Attribute::Body, "text"));
        assert_ne!(a, cache_key("m1", Attribute::Race, "other"));
        assert_eq!(a, cache_key("m1", Attribute::Race, "text"));
    }
}
