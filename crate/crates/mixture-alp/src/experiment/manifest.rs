//! Artifact manifest: config echo, seeds, and a content hash per emitted
//! file, so a bundle can be re-verified byte-for-byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Echo of the parsed experiment configuration.
    pub config: serde_json::Value,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    /// Relative path -> sha256 of the file contents.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl Manifest {
    pub fn new(config: serde_json::Value, base_seed: u64, trials: usize) -> Self {
        Self {
            config,
            base_seed,
            seeds: (0..trials as u64).map(|k| base_seed + k).collect(),
            files: BTreeMap::new(),
        }
    }

    /// Record `path` (relative to the bundle root `dir`).
    pub fn add_file(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(dir)
            .map_err(|_| Error::Invalid(format!("{} not under {}", path.display(), dir.display())))?;
        self.files.insert(rel.to_string_lossy().replace('\\', "/"), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_NAME), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Re-hash every listed file; returns the relative paths that are missing or
/// whose contents changed.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let manifest = Manifest::read(dir)?;
    let mut bad = Vec::new();
    for (rel, expect) in &manifest.files {
        let path = dir.join(rel);
        match hash_file(&path) {
            Ok(actual) if &actual == expect => {}
            _ => bad.push(rel.clone()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verification_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("data.csv");
        std::fs::write(&file, "a,b\n1,2\n").unwrap();
        let mut manifest = Manifest::new(serde_json::json!({"trials": 1}), 7, 1);
        manifest.add_file(dir.path(), &file).unwrap();
        manifest.write(dir.path()).unwrap();

        assert!(verify(dir.path()).unwrap().is_empty());

        std::fs::write(&file, "a,b\n1,3\n").unwrap();
        let bad = verify(dir.path()).unwrap();
        assert_eq!(bad, vec!["data.csv".to_string()]);
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(
            sha256_hex(b"hello"),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
