//! Content-addressed artifact storage.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use crate::digests::{content_digest, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("artifact storage: {0}")]
pub struct StoreError(pub String);

pub trait ArtifactStore: Send + Sync {
    fn put(&self, bytes: &[u8]) -> Result<Digest, StoreError>;

    /// Raw stored bytes, unchecked; callers that trust the content must
    /// re-hash it.
    fn get(&self, digest: &Digest) -> Result<Option<Vec<u8>>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryArtifactStore {
    blobs: RwLock<HashMap<Digest, Vec<u8>>>,
}

impl MemoryArtifactStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces stored bytes without re-keying, simulating tampering at rest.
    pub fn overwrite_unchecked(&self, digest: &Digest, bytes: Vec<u8>) {
        self.blobs.write().expect("store lock poisoned").insert(*digest, bytes);
    }
}

impl ArtifactStore for MemoryArtifactStore {
    fn put(&self, bytes: &[u8]) -> Result<Digest, StoreError> {
        let digest = content_digest(bytes);
        self.blobs.write().expect("store lock poisoned").entry(digest).or_insert_with(|| bytes.to_vec());
        Ok(digest)
    }

    fn get(&self, digest: &Digest) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.blobs.read().expect("store lock poisoned").get(digest).cloned())
    }
}

/// One file per blob, named by the digest's hex.
#[derive(Debug, Clone)]
pub struct FsArtifactStore {
    root: PathBuf,
}

impl FsArtifactStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root).map_err(|e| StoreError(format!("{}: {e}", root.display())))?;
        Ok(FsArtifactStore { root: root.to_path_buf() })
    }

    pub fn path_for(&self, digest: &Digest) -> PathBuf {
        self.root.join(digest.to_hex())
    }
}

impl ArtifactStore for FsArtifactStore {
    fn put(&self, bytes: &[u8]) -> Result<Digest, StoreError> {
        let digest = content_digest(bytes);
        let path = self.path_for(&digest);
        if path.exists() {
            return Ok(digest);
        }
        let io = |e: std::io::Error| StoreError(format!("{}: {e}", path.display()));
        let tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        let mut f: &File = tmp.as_file();
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(digest)
    }

    fn get(&self, digest: &Digest) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.path_for(digest)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError(e.to_string())),
        }
    }
}
