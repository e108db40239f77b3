//! Content hashes and stage completion stamps.
//!
//! A stage writes a stamp holding the hash of everything it read (config
//! section, seed, input files) and the hashes of the files it wrote. When
//! both still match, re-running the stage does nothing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Accumulates the inputs of a stage into one key.
#[derive(Debug, Default)]
pub struct KeyBuilder {
    hasher: Sha256,
}

impl KeyBuilder {
    pub fn new(stage: &str) -> KeyBuilder {
        let mut k = KeyBuilder::default();
        k.add("stage", stage);
        k
    }

    pub fn add(&mut self, name: &str, value: &str) -> &mut Self {
        for part in [name, value] {
            self.hasher.update((part.len() as u64).to_le_bytes());
            self.hasher.update(part.as_bytes());
        }
        self
    }

    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<&mut Self> {
        let text = serde_json::to_string(value)?;
        Ok(self.add(name, &text))
    }

    pub fn add_file(&mut self, path: &Path) -> Result<&mut Self> {
        let h = file_hash(path)?;
        Ok(self.add(&path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), &h))
    }

    pub fn finish(&self) -> String {
        let digest = self.hasher.clone().finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub key: String,
    pub config_hash: String,
    /// File name (relative to the stamp's directory) → content hash.
    pub outputs: BTreeMap<String, String>,
}

fn stamp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".stamp-{name}.json"))
}

/// True when a stamp for `name` with `key` exists and every output it lists
/// is unchanged.
pub fn is_fresh(dir: &Path, name: &str, key: &str) -> bool {
    let Ok(text) = std::fs::read_to_string(stamp_path(dir, name)) else { return false };
    let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else { return false };
    stamp.key == key
        && stamp.outputs.iter().all(|(file, hash)| file_hash(&dir.join(file)).is_ok_and(|h| &h == hash))
}

pub fn write_stamp(dir: &Path, name: &str, key: &str, config_hash: &str, outputs: &[PathBuf]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in outputs {
        let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned();
        hashes.insert(rel, file_hash(p)?);
    }
    let stamp = Stamp { stage: name.to_string(), key: key.to_string(), config_hash: config_hash.to_string(), outputs: hashes };
    std::fs::write(stamp_path(dir, name), serde_json::to_vec_pretty(&stamp)?)?;
    Ok(())
}
