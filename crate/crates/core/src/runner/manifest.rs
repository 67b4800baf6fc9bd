//! Run manifests: the record that makes a finished run reproducible.
//!
//! Every run directory gets a `manifest.json` holding the fully resolved
//! config (every default made explicit), the seed, the code version, the
//! RNG scheme, wall-clock time, and a hash inventory of every output file.
//! Re-running from the manifest's config and seed must reproduce the
//! inventory bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Manifest schema tag, bumped on breaking layout changes.
pub const MANIFEST_SCHEMA: &str = "dmf-run-manifest/1";

/// Name, size, and content hash of one output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub experiment: String,
    /// Hash of the resolved config with the seed removed, so sibling seeds
    /// of one experiment share a directory.
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub rng_scheme: String,
    /// The config with every default resolved; re-running exactly this with
    /// `seed` reproduces the file inventory bit for bit.
    pub resolved_config: Value,
    pub wall_clock_seconds: f64,
    /// Every file in the run directory except the manifest itself, sorted
    /// by name.
    pub files: Vec<FileRecord>,
}

/// Canonical JSON text: serde_json object keys are already sorted
/// (BTreeMap) and float formatting is deterministic, so compact
/// serialization is canonical.
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON values serialize")
}

/// SHA-256 of the canonical form of `value`, hex-encoded.
pub fn hash_value(value: &Value) -> String {
    let mut h = Sha256::new();
    h.update(canonical_json(value).as_bytes());
    hex(&h.finalize())
}

/// Hash of a resolved config with the seed stripped: the experiment's
/// identity across seeds.
pub fn config_hash(resolved: &Value) -> String {
    let mut v = resolved.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    hash_value(&v)
}

/// SHA-256 of a file's contents, hex-encoded.
pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash inventory of `dir`'s regular files (sorted by name), skipping the
/// manifest itself so the manifest can be written last.
pub fn inventory(dir: &Path) -> Result<Vec<FileRecord>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|entry| Ok(entry?.path()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|path| {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CoreError::invalid(format!("non-UTF-8 file name in {dir:?}")))?
                .to_string();
            let bytes = fs::metadata(&path)?.len();
            let sha256 = hash_file(&path)?;
            Ok(FileRecord { name, bytes, sha256 })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

// ── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RNG_SCHEME;
    use serde_json::json;

    #[test]
    fn hashes_are_stable_and_key_order_free() {
        let a: Value = serde_json::from_str(r#"{"b": 2, "a": [1.5, "x"]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": [1.5, "x"], "b": 2}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(hash_value(&a), hash_value(&b));
        assert_eq!(hash_value(&a).len(), 64);
        assert_ne!(hash_value(&a), hash_value(&json!({"a": [1.5, "x"], "b": 3})));
    }

    #[test]
    fn config_hash_ignores_the_seed_and_nothing_else() {
        let base = json!({"kind": "exact-train", "grid_n": 20, "seed": 42});
        let other_seed = json!({"kind": "exact-train", "grid_n": 20, "seed": 123});
        let other_grid = json!({"kind": "exact-train", "grid_n": 21, "seed": 42});
        assert_eq!(config_hash(&base), config_hash(&other_seed));
        assert_ne!(config_hash(&base), config_hash(&other_grid));
    }

    #[test]
    fn inventory_lists_sorted_files_and_skips_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "x,y\n").unwrap();
        fs::write(dir.path().join("a.json"), "{}").unwrap();
        fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();

        let inv = inventory(dir.path()).unwrap();
        let names: Vec<&str> = inv.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["a.json", "b.csv"], "FAIL: inventory must sort and skip manifest");
        assert_eq!(inv[1].bytes, 4);
        assert_eq!(inv[0].sha256, hash_value(&json!({})));
    }

    #[test]
    fn manifests_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            experiment: "exact-train".into(),
            config_hash: "abc".into(),
            seed: 42,
            code_version: "0.1.0".into(),
            rng_scheme: RNG_SCHEME.into(),
            resolved_config: json!({"kind": "exact-train", "seed": 42}),
            wall_clock_seconds: 1.25,
            files: vec![FileRecord { name: "x".into(), bytes: 1, sha256: "ff".into() }],
        };
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m, back);
    }
}
