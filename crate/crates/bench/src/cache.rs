use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the canonical JSON form of `value`, hex encoded.
pub fn content_key(value: &impl Serialize) -> Result<String> {
    // Round-tripping through `Value` sorts object keys.
    let canonical = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(format!("{:x}", Sha256::digest(&canonical)))
}

/// Completed sweep cells stored under `<root>/cells/<key>.json` and trained
/// models under `<root>/models/<key>.pnn`. A cache without a root keeps
/// nothing, so every cell is computed.
#[derive(Debug, Default)]
pub struct Cache {
    root: Option<PathBuf>,
    computed: usize,
    reused: usize,
}

impl Cache {
    pub fn disabled() -> Self {
        Cache::default()
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Cache {
            root: Some(root.into()),
            ..Cache::default()
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn computed(&self) -> usize {
        self.computed
    }

    pub fn reused(&self) -> usize {
        self.reused
    }

    fn cell_path(&self, key: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join("cells").join(format!("{key}.json")))
    }

    /// Path a model with this key is stored at, if caching is enabled.
    pub fn model_path(&self, key: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join("models").join(format!("{key}.pnn")))
    }

    /// Returns the cached value for `key`, or computes and stores it. Cells
    /// that fail to parse are recomputed.
    pub fn cell<T, F>(&mut self, key: &impl Serialize, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let key = content_key(key)?;
        let path = self.cell_path(&key);
        if let Some(path) = &path {
            if let Ok(bytes) = fs::read(path) {
                if let Ok(value) = serde_json::from_slice(&bytes) {
                    self.reused += 1;
                    return Ok(value);
                }
            }
        }
        let value = compute()?;
        self.computed += 1;
        if let Some(path) = path {
            write_atomic(&path, &serde_json::to_vec(&value)?)?;
        }
        Ok(value)
    }

    pub fn note_reused(&mut self) {
        self.reused += 1;
    }

    pub fn note_computed(&mut self) {
        self.computed += 1;
    }
}

/// Writes through a temporary sibling so an interrupted run never leaves a
/// half-written cell behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_ignore_field_order() {
        let a = content_key(&json!({"a": 1, "b": [1, 2]})).unwrap();
        let b = content_key(&json!({"b": [1, 2], "a": 1})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, content_key(&json!({"a": 2, "b": [1, 2]})).unwrap());
    }

    #[test]
    fn cells_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = Cache::at(dir.path());
        let v: u32 = cache.cell(&"k", || Ok(7)).unwrap();
        assert_eq!(v, 7);
        let v: u32 = cache.cell(&"k", || panic!("recomputed")).unwrap();
        assert_eq!(v, 7);
        assert_eq!((cache.computed(), cache.reused()), (1, 1));

        let mut off = Cache::disabled();
        let _: u32 = off.cell(&"k", || Ok(1)).unwrap();
        let _: u32 = off.cell(&"k", || Ok(1)).unwrap();
        assert_eq!(off.computed(), 2);
    }
}
