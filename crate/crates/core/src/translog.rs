//! Append-only Merkle transparency log.
//!
//! Tree shape and hashing follow RFC 6962: leaves are `H(0x00 || body)`,
//! interior nodes `H(0x01 || left || right)`, and a tree of `n` leaves splits
//! at the largest power of two strictly below `n`.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::digests::{canonicalize, from_document, to_document, Digest, Document};
use crate::encoding::base64_bytes;
use crate::signing::{PublicKey, ServiceKey};
use crate::time::{Clock, Timestamp};

const ENTRY_FILE: &str = "entries.log";
const HEAD_FILE: &str = "head.json";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("corrupt log store: {0}")]
    CorruptStore(String),
    #[error("entry body is not a canonical document")]
    NonCanonicalBody,
}

fn io_err(e: std::io::Error) -> LogError {
    LogError::StorageFailure(e.to_string())
}

pub fn leaf_hash(body: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(body);
    Digest::from_bytes(h.finalize().into())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(left.as_bytes());
    h.update(right.as_bytes());
    Digest::from_bytes(h.finalize().into())
}

/// Root of the empty tree: the hash of the empty string.
pub fn empty_root() -> Digest {
    Digest::from_bytes(Sha256::digest(b"").into())
}

/// Largest power of two strictly less than `n` (`n >= 2`).
fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}

/// Merkle tree over leaf hashes with a cache of every complete subtree, so
/// historical roots and proofs cost `O(log^2 n)` hashes.
#[derive(Debug, Clone, Default)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new() -> Self {
        MerkleTree::default()
    }

    pub fn from_leaf_hashes(leaves: impl IntoIterator<Item = Digest>) -> Self {
        let mut t = MerkleTree::new();
        for l in leaves {
            t.push_leaf_hash(l);
        }
        t
    }

    pub fn size(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.len() as u64)
    }

    pub fn push_leaf_hash(&mut self, leaf: Digest) {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf);
        let mut level = 0;
        while self.levels[level].len() % 2 == 0 {
            let n = self.levels[level].len();
            let parent = node_hash(&self.levels[level][n - 2], &self.levels[level][n - 1]);
            if self.levels.len() == level + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[level + 1].push(parent);
            level += 1;
        }
    }

    pub fn leaf(&self, index: u64) -> Option<Digest> {
        self.levels.first()?.get(index as usize).copied()
    }

    /// Hash of leaves `[start, end)`, `start < end <= size`.
    fn subtree(&self, start: u64, end: u64) -> Digest {
        let len = end - start;
        if len.is_power_of_two() && start % len == 0 {
            let level = len.trailing_zeros() as usize;
            return self.levels[level][(start / len) as usize];
        }
        let k = split_point(len);
        node_hash(&self.subtree(start, start + k), &self.subtree(start + k, end))
    }

    pub fn root(&self, size: u64) -> Result<Digest, LogError> {
        if size > self.size() {
            return Err(LogError::OutOfRange(format!("size {size} exceeds tree size {}", self.size())));
        }
        Ok(if size == 0 { empty_root() } else { self.subtree(0, size) })
    }

    pub fn inclusion_proof(&self, index: u64, tree_size: u64) -> Result<InclusionProof, LogError> {
        if index >= tree_size || tree_size > self.size() {
            return Err(LogError::OutOfRange(format!(
                "index {index}, tree size {tree_size}, log size {}",
                self.size()
            )));
        }
        let mut path = Vec::new();
        self.path(index, 0, tree_size, &mut path);
        Ok(InclusionProof { leaf_index: index, tree_size, path })
    }

    fn path(&self, m: u64, start: u64, end: u64, out: &mut Vec<Digest>) {
        let n = end - start;
        if n == 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.path(m, start, start + k, out);
            out.push(self.subtree(start + k, end));
        } else {
            self.path(m - k, start + k, end, out);
            out.push(self.subtree(start, start + k));
        }
    }

    pub fn consistency_proof(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LogError> {
        if old_size > new_size || new_size > self.size() {
            return Err(LogError::OutOfRange(format!("old {old_size}, new {new_size}, log size {}", self.size())));
        }
        let mut path = Vec::new();
        if old_size > 0 && old_size < new_size {
            self.subproof(old_size, 0, new_size, true, &mut path);
        }
        Ok(ConsistencyProof { old_size, new_size, path })
    }

    fn subproof(&self, m: u64, start: u64, end: u64, complete: bool, out: &mut Vec<Digest>) {
        let n = end - start;
        if m == n {
            if !complete {
                out.push(self.subtree(start, end));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, start, start + k, complete, out);
            out.push(self.subtree(start + k, end));
        } else {
            self.subproof(m - k, start + k, end, false, out);
            out.push(self.subtree(start, start + k));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub path: Vec<Digest>,
}

impl InclusionProof {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("proof is representable")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub path: Vec<Digest>,
}

impl ConsistencyProof {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("proof is representable")
    }
}

pub fn verify_inclusion(proof: &InclusionProof, leaf: &Digest, root: &Digest) -> bool {
    if proof.leaf_index >= proof.tree_size {
        return false;
    }
    let mut f_n = proof.leaf_index;
    let mut s_n = proof.tree_size - 1;
    let mut r = *leaf;
    for p in &proof.path {
        if s_n == 0 {
            return false;
        }
        if f_n & 1 == 1 || f_n == s_n {
            r = node_hash(p, &r);
            while f_n & 1 == 0 && f_n != 0 {
                f_n >>= 1;
                s_n >>= 1;
            }
        } else {
            r = node_hash(&r, p);
        }
        f_n >>= 1;
        s_n >>= 1;
    }
    s_n == 0 && r == *root
}

pub fn verify_consistency(proof: &ConsistencyProof, old_root: &Digest, new_root: &Digest) -> bool {
    let (old, new) = (proof.old_size, proof.new_size);
    if old > new {
        return false;
    }
    if old == new {
        return proof.path.is_empty() && old_root == new_root;
    }
    if old == 0 {
        return proof.path.is_empty() && *old_root == empty_root();
    }
    if proof.path.is_empty() {
        return false;
    }
    let mut path: Vec<Digest> = Vec::with_capacity(proof.path.len() + 1);
    if old.is_power_of_two() {
        path.push(*old_root);
    }
    path.extend_from_slice(&proof.path);

    let mut f_n = old - 1;
    let mut s_n = new - 1;
    while f_n & 1 == 1 {
        f_n >>= 1;
        s_n >>= 1;
    }
    let mut f_r = path[0];
    let mut s_r = path[0];
    for c in &path[1..] {
        if s_n == 0 {
            return false;
        }
        if f_n & 1 == 1 || f_n == s_n {
            f_r = node_hash(c, &f_r);
            s_r = node_hash(c, &s_r);
            while f_n & 1 == 0 && f_n != 0 {
                f_n >>= 1;
                s_n >>= 1;
            }
        } else {
            s_r = node_hash(&s_r, c);
        }
        f_n >>= 1;
        s_n >>= 1;
    }
    f_r == *old_root && s_r == *new_root && s_n == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    SigningEvent,
    CertificationEvent,
    RevocationEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub index: u64,
    pub kind: EntryKind,
    /// Canonical document bytes.
    pub body: Vec<u8>,
    pub integrated_at: Timestamp,
}

impl LogEntry {
    pub fn leaf_hash(&self) -> Digest {
        leaf_hash(&self.body)
    }

    pub fn body_document(&self) -> Document {
        Document::from_json_slice(&self.body).expect("log bodies are canonical documents")
    }

    pub fn to_document(&self) -> Document {
        Document::map([
            ("body", self.body_document()),
            ("index", Document::Int(self.index as i64)),
            ("integratedAt", self.integrated_at.to_string().into()),
            ("kind", to_document(&self.kind).expect("kind")),
        ])
    }

    pub fn from_document(doc: &Document) -> Result<Self, String> {
        let index = doc.get("index").and_then(Document::as_int).ok_or("missing index")?;
        let kind: EntryKind = from_document(doc.get("kind").ok_or("missing kind")?).map_err(|e| e.to_string())?;
        let integrated_at =
            doc.get("integratedAt").and_then(Document::as_str).ok_or("missing integratedAt")?.parse()?;
        let body = canonicalize(doc.get("body").ok_or("missing body")?);
        Ok(LogEntry { index: u64::try_from(index).map_err(|e| e.to_string())?, kind, body, integrated_at })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SignedTreeHead {
    pub size: u64,
    pub root_hash: Digest,
    pub timestamp: Timestamp,
    #[serde(with = "base64_bytes")]
    pub log_signature: Vec<u8>,
}

impl SignedTreeHead {
    fn signed_body(size: u64, root: &Digest, timestamp: Timestamp) -> Vec<u8> {
        canonicalize(&Document::map([
            ("rootHash", (*root).into()),
            ("size", Document::Int(size as i64)),
            ("timestamp", timestamp.to_string().into()),
        ]))
    }

    pub fn sign(size: u64, root_hash: Digest, timestamp: Timestamp, key: &ServiceKey) -> Self {
        let log_signature = key.sign(&Self::signed_body(size, &root_hash, timestamp));
        SignedTreeHead { size, root_hash, timestamp, log_signature }
    }

    pub fn verify(&self, log_key: &PublicKey) -> bool {
        log_key.verify(&Self::signed_body(self.size, &self.root_hash, self.timestamp), &self.log_signature)
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("tree head is representable")
    }
}

struct LogState {
    entries: Vec<LogEntry>,
    tree: MerkleTree,
    head: SignedTreeHead,
    entry_file: Option<File>,
}

/// The registry's transparency log. Appends are totally ordered through the
/// write lock; readers see any committed prefix.
pub struct TransparencyLog {
    state: RwLock<LogState>,
    key: ServiceKey,
    clock: Arc<dyn Clock>,
    dir: Option<PathBuf>,
}

impl TransparencyLog {
    pub fn in_memory(key: ServiceKey, clock: Arc<dyn Clock>) -> Self {
        let head = SignedTreeHead::sign(0, empty_root(), clock.now(), &key);
        TransparencyLog {
            state: RwLock::new(LogState { entries: Vec::new(), tree: MerkleTree::new(), head, entry_file: None }),
            key,
            clock,
            dir: None,
        }
    }

    /// Opens (or creates) a log persisted under `dir`, replaying every entry.
    ///
    /// A torn final record is truncated. A head that does not match the
    /// replayed tree, or a record out of sequence, is `CorruptStore`.
    pub fn open(dir: &Path, key: ServiceKey, clock: Arc<dyn Clock>) -> Result<Self, LogError> {
        fs::create_dir_all(dir).map_err(io_err)?;
        let entry_path = dir.join(ENTRY_FILE);
        let mut raw = Vec::new();
        if entry_path.exists() {
            File::open(&entry_path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io_err)?;
        }
        let mut entries = Vec::new();
        let mut tree = MerkleTree::new();
        let mut pos = 0usize;
        while pos < raw.len() {
            if raw.len() - pos < 4 {
                break;
            }
            let len = u32::from_be_bytes(raw[pos..pos + 4].try_into().expect("4 bytes")) as usize;
            if raw.len() - pos - 4 < len {
                break;
            }
            let record = &raw[pos + 4..pos + 4 + len];
            let doc = Document::from_json_slice(record)
                .map_err(|e| LogError::CorruptStore(format!("record at byte {pos}: {e}")))?;
            if canonicalize(&doc) != record {
                return Err(LogError::CorruptStore(format!("record at byte {pos} is not canonical")));
            }
            let entry = LogEntry::from_document(&doc)
                .map_err(|e| LogError::CorruptStore(format!("record at byte {pos}: {e}")))?;
            if entry.index != entries.len() as u64 {
                return Err(LogError::CorruptStore(format!(
                    "record {} out of sequence (expected {})",
                    entry.index,
                    entries.len()
                )));
            }
            tree.push_leaf_hash(entry.leaf_hash());
            entries.push(entry);
            pos += 4 + len;
        }
        if pos < raw.len() {
            // torn write from an interrupted append; the entry was never acknowledged
            let f = OpenOptions::new().write(true).open(&entry_path).map_err(io_err)?;
            f.set_len(pos as u64).map_err(io_err)?;
            f.sync_all().map_err(io_err)?;
        }

        let head_path = dir.join(HEAD_FILE);
        let stored_head = if head_path.exists() {
            let bytes = fs::read(&head_path).map_err(io_err)?;
            let doc = Document::from_json_slice(&bytes).map_err(|e| LogError::CorruptStore(e.to_string()))?;
            let head: SignedTreeHead = from_document(&doc).map_err(|e| LogError::CorruptStore(e.to_string()))?;
            if !head.verify(&key.public_key()) {
                return Err(LogError::CorruptStore("tree head signature does not verify".into()));
            }
            if head.size > tree.size() {
                return Err(LogError::CorruptStore(format!(
                    "tree head covers {} entries but only {} replayed",
                    head.size,
                    tree.size()
                )));
            }
            if tree.root(head.size)? != head.root_hash {
                return Err(LogError::CorruptStore("replayed root differs from stored tree head".into()));
            }
            Some(head)
        } else {
            None
        };

        let head = match stored_head {
            Some(h) if h.size == tree.size() => h,
            _ => {
                let h = SignedTreeHead::sign(tree.size(), tree.root(tree.size())?, clock.now(), &key);
                write_head(dir, &h)?;
                h
            }
        };
        let entry_file = OpenOptions::new().create(true).append(true).open(&entry_path).map_err(io_err)?;
        Ok(TransparencyLog {
            state: RwLock::new(LogState { entries, tree, head, entry_file: Some(entry_file) }),
            key,
            clock,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn append(&self, kind: EntryKind, body: &[u8]) -> Result<(u64, SignedTreeHead), LogError> {
        let doc = Document::from_json_slice(body).map_err(|_| LogError::NonCanonicalBody)?;
        if canonicalize(&doc) != body {
            return Err(LogError::NonCanonicalBody);
        }
        self.append_with(kind, |_, _| doc).map(|(entry, head)| (entry.index, head))
    }

    /// Appends a body built from the assigned index and integration time, so
    /// the body itself can commit to both.
    pub fn append_with(
        &self,
        kind: EntryKind,
        build: impl FnOnce(u64, Timestamp) -> Document,
    ) -> Result<(LogEntry, SignedTreeHead), LogError> {
        self.try_append_with(kind, |index, at| Ok::<_, LogError>(build(index, at)))
    }

    /// Like `append_with`, but `build` may refuse; nothing is appended then.
    pub fn try_append_with<E: From<LogError>>(
        &self,
        kind: EntryKind,
        build: impl FnOnce(u64, Timestamp) -> Result<Document, E>,
    ) -> Result<(LogEntry, SignedTreeHead), E> {
        let mut state = self.state.write().expect("log lock poisoned");
        let index = state.entries.len() as u64;
        let integrated_at = self.clock.now();
        let body = canonicalize(&build(index, integrated_at)?);
        if body.is_empty() {
            return Err(LogError::NonCanonicalBody.into());
        }
        let entry = LogEntry { index, kind, body, integrated_at };

        if let Some(file) = state.entry_file.as_mut() {
            let record = canonicalize(&entry.to_document());
            let mut buf = (record.len() as u32).to_be_bytes().to_vec();
            buf.extend_from_slice(&record);
            file.write_all(&buf).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }

        state.tree.push_leaf_hash(entry.leaf_hash());
        let size = state.tree.size();
        let head = SignedTreeHead::sign(size, state.tree.root(size)?, integrated_at, &self.key);
        if let Some(dir) = &self.dir {
            write_head(dir, &head)?;
        }
        state.entries.push(entry.clone());
        state.head = head.clone();
        Ok((entry, head))
    }

    pub fn size(&self) -> u64 {
        self.state.read().expect("log lock poisoned").tree.size()
    }

    pub fn head(&self) -> SignedTreeHead {
        self.state.read().expect("log lock poisoned").head.clone()
    }

    pub fn entry(&self, index: u64) -> Option<LogEntry> {
        self.state.read().expect("log lock poisoned").entries.get(index as usize).cloned()
    }

    /// Snapshot of entries `[from, to)`, clamped to the current size.
    pub fn entries(&self, from: u64, to: u64) -> Vec<LogEntry> {
        let state = self.state.read().expect("log lock poisoned");
        let to = (to as usize).min(state.entries.len());
        let from = (from as usize).min(to);
        state.entries[from..to].to_vec()
    }

    pub fn root_at(&self, size: u64) -> Result<Digest, LogError> {
        self.state.read().expect("log lock poisoned").tree.root(size)
    }

    pub fn inclusion_proof(&self, index: u64, tree_size: u64) -> Result<InclusionProof, LogError> {
        self.state.read().expect("log lock poisoned").tree.inclusion_proof(index, tree_size)
    }

    pub fn consistency_proof(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LogError> {
        self.state.read().expect("log lock poisoned").tree.consistency_proof(old_size, new_size)
    }
}

fn write_head(dir: &Path, head: &SignedTreeHead) -> Result<(), LogError> {
    let tmp = dir.join(format!("{HEAD_FILE}.tmp"));
    let mut f = File::create(&tmp).map_err(io_err)?;
    f.write_all(&canonicalize(&head.to_document())).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, dir.join(HEAD_FILE)).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digests::content_digest;
    use crate::time::ManualClock;

    fn log() -> TransparencyLog {
        TransparencyLog::in_memory(
            ServiceKey::from_seed([5; 32]),
            Arc::new(ManualClock::new(Timestamp::from_unix(1_000))),
        )
    }

    fn body(i: u64) -> Vec<u8> {
        canonicalize(&Document::map([("n", Document::Int(i as i64))]))
    }

    fn concat_hash(parts: &[&[u8]]) -> Digest {
        content_digest(&parts.concat())
    }

    #[test]
    fn first_append_root_is_leaf_hash() {
        let log = log();
        let (index, head) = log.append(EntryKind::SigningEvent, &body(0)).unwrap();
        assert_eq!(index, 0);
        assert_eq!(head.size, 1);
        assert_eq!(head.root_hash, concat_hash(&[&[0u8], &body(0)]));
    }

    #[test]
    fn two_leaf_root() {
        let log = log();
        log.append(EntryKind::SigningEvent, &body(0)).unwrap();
        let (index, head) = log.append(EntryKind::SigningEvent, &body(1)).unwrap();
        assert_eq!(index, 1);
        let l0 = concat_hash(&[&[0u8], &body(0)]);
        let l1 = concat_hash(&[&[0u8], &body(1)]);
        assert_eq!(head.root_hash, concat_hash(&[&[1u8], l0.as_bytes(), l1.as_bytes()]));
    }

    #[test]
    fn size_one_proof_is_empty() {
        let log = log();
        log.append(EntryKind::SigningEvent, &body(0)).unwrap();
        let p = log.inclusion_proof(0, 1).unwrap();
        assert!(p.path.is_empty());
        assert!(verify_inclusion(&p, &leaf_hash(&body(0)), &log.root_at(1).unwrap()));
    }

    #[test]
    fn equal_size_consistency() {
        let log = log();
        for i in 0..5 {
            log.append(EntryKind::SigningEvent, &body(i)).unwrap();
        }
        let p = log.consistency_proof(3, 3).unwrap();
        assert!(p.path.is_empty());
        let r = log.root_at(3).unwrap();
        assert!(verify_consistency(&p, &r, &r));
        assert!(!verify_consistency(&p, &r, &log.root_at(4).unwrap()));
    }

    #[test]
    fn flipped_path_digest_fails() {
        let log = log();
        for i in 0..7 {
            log.append(EntryKind::SigningEvent, &body(i)).unwrap();
        }
        let mut p = log.inclusion_proof(2, 7).unwrap();
        let root = log.root_at(7).unwrap();
        assert!(verify_inclusion(&p, &leaf_hash(&body(2)), &root));
        let mut bytes = *p.path[1].as_bytes();
        bytes[0] ^= 1;
        p.path[1] = Digest::from_bytes(bytes);
        assert!(!verify_inclusion(&p, &leaf_hash(&body(2)), &root));
    }

    #[test]
    fn out_of_range() {
        let log = log();
        log.append(EntryKind::SigningEvent, &body(0)).unwrap();
        assert!(matches!(log.inclusion_proof(1, 1), Err(LogError::OutOfRange(_))));
        assert!(matches!(log.inclusion_proof(0, 2), Err(LogError::OutOfRange(_))));
        assert!(matches!(log.consistency_proof(2, 1), Err(LogError::OutOfRange(_))));
    }

    #[test]
    fn non_canonical_body_rejected() {
        let log = log();
        assert_eq!(log.append(EntryKind::SigningEvent, b"{\"b\":1, \"a\":2}").unwrap_err(), LogError::NonCanonicalBody);
        assert_eq!(log.size(), 0);
    }

    #[test]
    fn heads_verify_under_log_key() {
        let log = log();
        let (_, head) = log.append(EntryKind::RevocationEvent, &body(0)).unwrap();
        assert!(head.verify(&log.public_key()));
        let mut forged = head.clone();
        forged.size = 2;
        assert!(!forged.verify(&log.public_key()));
    }

    #[test]
    fn domain_separation_blocks_node_as_leaf() {
        // presenting the concatenation of two leaf hashes as a single leaf
        // body must not reproduce the two-leaf root
        let log = log();
        log.append(EntryKind::SigningEvent, &body(0)).unwrap();
        log.append(EntryKind::SigningEvent, &body(1)).unwrap();
        let root = log.root_at(2).unwrap();
        let l0 = leaf_hash(&body(0));
        let l1 = leaf_hash(&body(1));
        let forged = [l0.as_bytes().as_slice(), l1.as_bytes().as_slice()].concat();
        assert_ne!(leaf_hash(&forged), root);
        let p = InclusionProof { leaf_index: 0, tree_size: 1, path: vec![] };
        assert!(!verify_inclusion(&p, &leaf_hash(&forged), &root));
    }

    #[test]
    fn persistence_replays_and_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(Timestamp::from_unix(1_000)));
        let heads: Vec<SignedTreeHead> = {
            let log = TransparencyLog::open(dir.path(), ServiceKey::from_seed([5; 32]), clock.clone()).unwrap();
            (0..6).map(|i| log.append(EntryKind::CertificationEvent, &body(i)).unwrap().1).collect()
        };
        // half-written record
        let mut f = OpenOptions::new().append(true).open(dir.path().join(ENTRY_FILE)).unwrap();
        f.write_all(&[0, 0, 0, 50, b'{']).unwrap();
        drop(f);

        let log = TransparencyLog::open(dir.path(), ServiceKey::from_seed([5; 32]), clock.clone()).unwrap();
        assert_eq!(log.size(), 6);
        for h in &heads {
            assert_eq!(log.root_at(h.size).unwrap(), h.root_hash);
        }
        assert_eq!(log.head().root_hash, heads[5].root_hash);
        log.append(EntryKind::CertificationEvent, &body(6)).unwrap();
        drop(log);
        let log = TransparencyLog::open(dir.path(), ServiceKey::from_seed([5; 32]), clock).unwrap();
        assert_eq!(log.size(), 7);
    }

    #[test]
    fn rewritten_entry_is_corrupt_store() {
        let dir = tempfile::tempdir().unwrap();
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(Timestamp::from_unix(1_000)));
        {
            let log = TransparencyLog::open(dir.path(), ServiceKey::from_seed([5; 32]), clock.clone()).unwrap();
            for i in 0..3 {
                log.append(EntryKind::CertificationEvent, &body(i)).unwrap();
            }
        }
        let path = dir.path().join(ENTRY_FILE);
        let raw = fs::read(&path).unwrap();
        let needle = b"\"n\":1";
        let at = raw.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut tampered = raw.clone();
        tampered[at + 4] = b'7';
        fs::write(&path, tampered).unwrap();
        assert!(matches!(
            TransparencyLog::open(dir.path(), ServiceKey::from_seed([5; 32]), clock),
            Err(LogError::CorruptStore(_))
        ));
    }
}
