//! On-disk pool store.
//!
//! ```text
//! <root>/manifests/v00000001.json   one file per manifest version
//! <root>/shards/<sha256>.jsonl      category documents, content-addressed
//! <root>/.lock                      held exclusively while writing
//! ```

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{documents_jsonl, SeedPoolError, SeedPoolManifest};
use crate::document::read_documents;
use crate::fingerprint::sha256_hex;

#[derive(Debug, Clone)]
pub struct PoolStore {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

impl PoolStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SeedPoolError> {
        let root = root.into();
        fs::create_dir_all(root.join("manifests"))?;
        fs::create_dir_all(root.join("shards"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self, version: u64) -> PathBuf {
        self.root.join("manifests").join(format!("v{version:08}.json"))
    }

    fn shard_path(&self, digest: &str) -> PathBuf {
        self.root.join("shards").join(format!("{digest}.jsonl"))
    }

    /// Stored versions in increasing order.
    pub fn versions(&self) -> Result<Vec<u64>, SeedPoolError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("manifests"))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(v) = name
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse().ok())
            {
                out.push(v);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn latest_version(&self) -> Result<Option<u64>, SeedPoolError> {
        Ok(self.versions()?.last().copied())
    }

    /// Persists a manifest and its document shards. The version must exceed
    /// every stored version; existing shards are reused by digest.
    pub fn save(&self, manifest: &SeedPoolManifest) -> Result<(), SeedPoolError> {
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(".lock"))?;
        lock.lock()?;

        if let Some(latest) = self.latest_version()? {
            if manifest.version <= latest {
                return Err(SeedPoolError::VersionConflict {
                    version: manifest.version,
                    latest,
                });
            }
        }
        for cat in &manifest.categories {
            let path = self.shard_path(&cat.shard);
            if path.exists() {
                continue;
            }
            let bytes = documents_jsonl(&cat.documents);
            if sha256_hex(&bytes) != cat.shard {
                return Err(SeedPoolError::Corrupt(format!(
                    "category {:?} documents do not match digest {}",
                    cat.name, cat.shard
                )));
            }
            write_atomic(&path, &bytes)?;
        }
        let json = serde_json::to_vec_pretty(manifest)?;
        write_atomic(&self.manifest_path(manifest.version), &json)?;
        Ok(())
    }

    /// Loads a manifest with its documents, verifying shard digests.
    pub fn load(&self, version: u64) -> Result<SeedPoolManifest, SeedPoolError> {
        let path = self.manifest_path(version);
        if !path.exists() {
            return Err(SeedPoolError::VersionNotFound(version));
        }
        let mut manifest: SeedPoolManifest = serde_json::from_slice(&fs::read(&path)?)?;
        if manifest.version != version {
            return Err(SeedPoolError::Corrupt(format!(
                "{} declares version {}",
                path.display(),
                manifest.version
            )));
        }
        for cat in &mut manifest.categories {
            let shard = self.shard_path(&cat.shard);
            let bytes = fs::read(&shard)?;
            if sha256_hex(&bytes) != cat.shard {
                return Err(SeedPoolError::Corrupt(format!(
                    "shard {} fails its digest",
                    shard.display()
                )));
            }
            cat.documents = read_documents(&shard)?;
            if cat.documents.len() != cat.document_count {
                return Err(SeedPoolError::Corrupt(format!(
                    "category {:?} lists {} documents, shard has {}",
                    cat.name,
                    cat.document_count,
                    cat.documents.len()
                )));
            }
        }
        Ok(manifest)
    }

    /// Latest stored manifest, or the empty root manifest for a fresh store.
    pub fn load_latest(&self) -> Result<SeedPoolManifest, SeedPoolError> {
        match self.latest_version()? {
            Some(v) => self.load(v),
            None => Ok(SeedPoolManifest::new()),
        }
    }

    /// Versions from `version` back to its root, following `parent_version`.
    pub fn lineage(&self, version: u64) -> Result<Vec<u64>, SeedPoolError> {
        let mut chain = vec![version];
        let mut seen = HashSet::from([version]);
        let mut current = version;
        loop {
            let path = self.manifest_path(current);
            if !path.exists() {
                return Err(SeedPoolError::VersionNotFound(current));
            }
            let m: SeedPoolManifest = serde_json::from_slice(&fs::read(&path)?)?;
            match m.parent_version {
                None => return Ok(chain),
                Some(p) if p >= current || !seen.insert(p) => {
                    return Err(SeedPoolError::Corrupt(format!(
                        "version {current} has invalid parent {p}"
                    )))
                }
                Some(p) => {
                    // The empty root manifest (version 0) is implicit.
                    if p == 0 && !self.manifest_path(0).exists() {
                        chain.push(0);
                        return Ok(chain);
                    }
                    chain.push(p);
                    current = p;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::Document;
    use crate::seedpool::{Polarity, SeedCategory};

    fn category(name: &str, polarity: Polarity) -> SeedCategory {
        let docs = (0..3)
            .map(|i| Document::new(format!("{name}{i}"), format!("{name} body {i}")))
            .collect();
        SeedCategory::new(name, polarity, "unit", docs)
    }

    #[test]
    fn save_load_and_lineage() {
        let dir = tempfile::tempdir().unwrap();
        let store = PoolStore::open(dir.path()).unwrap();
        assert_eq!(store.load_latest().unwrap(), SeedPoolManifest::new());

        let v1 = SeedPoolManifest::new()
            .with_category(category("good", Polarity::Positive))
            .unwrap();
        store.save(&v1).unwrap();
        let v2 = v1.with_category(category("raw", Polarity::Negative)).unwrap();
        store.save(&v2).unwrap();
        let v3 = v2.mark_underrepresented("good", None, 3).unwrap();
        store.save(&v3).unwrap();

        assert_eq!(store.versions().unwrap(), vec![1, 2, 3]);
        assert_eq!(store.load(3).unwrap(), v3);
        assert_eq!(store.load_latest().unwrap(), v3);
        assert_eq!(store.lineage(3).unwrap(), vec![3, 2, 1, 0]);
        // Same documents, one shard.
        assert_eq!(fs::read_dir(dir.path().join("shards")).unwrap().count(), 2);
    }

    #[test]
    fn stale_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = PoolStore::open(dir.path()).unwrap();
        let v1 = SeedPoolManifest::new()
            .with_category(category("good", Polarity::Positive))
            .unwrap();
        store.save(&v1).unwrap();
        assert!(matches!(
            store.save(&v1),
            Err(SeedPoolError::VersionConflict { .. })
        ));
        assert!(matches!(store.load(7), Err(SeedPoolError::VersionNotFound(7))));
    }

    #[test]
    fn tampered_shard_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = PoolStore::open(dir.path()).unwrap();
        let v1 = SeedPoolManifest::new()
            .with_category(category("good", Polarity::Positive))
            .unwrap();
        store.save(&v1).unwrap();
        let shard = store.shard_path(&v1.categories[0].shard);
        fs::write(&shard, b"{\"text\":\"evil\"}\n").unwrap();
        assert!(matches!(store.load(1), Err(SeedPoolError::Corrupt(_))));
    }
}
