use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Sidecar written next to a stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub key: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: f64,
}

/// A stage's identity: name, parameters and input content hashes.
pub struct StageKey {
    pub stage: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

impl StageKey {
    pub fn new(stage: &str, seed: Option<u64>, params: impl Serialize) -> Result<Self> {
        Ok(StageKey {
            stage: stage.to_string(),
            seed,
            params: serde_json::to_value(params)?,
            inputs: BTreeMap::new(),
        })
    }

    pub fn input(mut self, name: &str, hash: String) -> Self {
        self.inputs.insert(name.to_string(), hash);
        self
    }

    pub fn digest(&self) -> String {
        let body = serde_json::json!({
            "stage": self.stage,
            "seed": self.seed,
            "params": self.params,
            "inputs": self.inputs,
        });
        sha256_hex(body.to_string().as_bytes())
    }

    pub fn manifest_path(&self, dir: &Path) -> PathBuf {
        dir.join("manifests").join(format!("{}.json", self.stage))
    }

    /// True when a manifest with the same key exists and every listed output
    /// still has the recorded hash.
    pub fn is_cached(&self, dir: &Path) -> bool {
        let Ok(text) = std::fs::read_to_string(self.manifest_path(dir)) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        m.key == self.digest()
            && !m.outputs.is_empty()
            && m.outputs
                .iter()
                .all(|(name, hash)| sha256_file(&dir.join(name)).is_ok_and(|h| &h == hash))
    }

    pub fn write_manifest(&self, dir: &Path, outputs: &[&str], wall_ms: f64) -> Result<()> {
        let outputs = outputs
            .iter()
            .map(|o| Ok((o.to_string(), sha256_file(&dir.join(o))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let m = Manifest {
            stage: self.stage.clone(),
            key: self.digest(),
            seed: self.seed,
            params: self.params.clone(),
            inputs: self.inputs.clone(),
            outputs,
            wall_ms,
        };
        let path = self.manifest_path(dir);
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn cache_hit_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let key = StageKey::new("s", Some(1), serde_json::json!({"a": 1})).unwrap().input("x", "00".into());
        assert!(!key.is_cached(dir.path()));
        std::fs::write(dir.path().join("o.txt"), "hi").unwrap();
        key.write_manifest(dir.path(), &["o.txt"], 1.0).unwrap();
        assert!(key.is_cached(dir.path()));
        let other = StageKey::new("s", Some(2), serde_json::json!({"a": 1})).unwrap().input("x", "00".into());
        assert!(!other.is_cached(dir.path()));
        std::fs::write(dir.path().join("o.txt"), "changed").unwrap();
        assert!(!key.is_cached(dir.path()));
    }
}
