//! Client-side verification from fetched log entries and raw artifacts.

use std::collections::{BTreeMap, BTreeSet};

use hcmr_core::certify::{CertState, Decision, ReviewPolicy};
use hcmr_core::compose::{self, Catalog};
use hcmr_core::digests::{from_document, Digest, Document, ModuleId};
use hcmr_core::provenance::TrustRootSet;
use hcmr_core::registry::{replay, Event, EventBody};
use hcmr_core::signing::{verify_signature, PublicKey};
use hcmr_core::translog::{
    verify_consistency, verify_inclusion, ConsistencyProof, InclusionProof, LogEntry, MerkleTree, SignedTreeHead,
};

use crate::client::{Api, RemoteStore};
use crate::Failure;

/// A verification failure as a report document.
fn failed(error: &str, message: impl Into<String>, extra: Vec<(&str, Document)>) -> Failure {
    let mut m: BTreeMap<String, Document> = extra.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    m.insert("error".into(), error.into());
    m.insert("message".into(), message.into().into());
    m.insert("verified".into(), false.into());
    Failure::Report(Document::Map(m))
}

fn decode<T: serde::de::DeserializeOwned>(doc: &Document, what: &str) -> Result<T, Failure> {
    from_document(doc).map_err(|e| failed("MalformedResponse", format!("{what}: {e}"), vec![]))
}

/// The signed head, checked against the log key.
pub fn fetch_head(api: &Api, log_key: &PublicKey) -> Result<SignedTreeHead, Failure> {
    let head: SignedTreeHead = decode(&api.get("/v1/log/head")?, "tree head")?;
    if !head.verify(log_key) {
        return Err(failed("InvalidTreeHead", "tree head signature does not verify under the log key", vec![]));
    }
    Ok(head)
}

/// Entries `[0, size)`, checked for position and recomputed into a tree.
pub fn fetch_entries(api: &Api, size: u64) -> Result<(Vec<LogEntry>, MerkleTree), Failure> {
    let mut entries = Vec::with_capacity(size as usize);
    for i in 0..size {
        let doc = api.get(&format!("/v1/log/entries/{i}"))?;
        let entry = LogEntry::from_document(&doc)
            .map_err(|e| failed("MalformedResponse", format!("entry {i}: {e}"), vec![]))?;
        if entry.index != i {
            return Err(failed(
                "LogMismatch",
                format!("entry served for index {i} claims index {}", entry.index),
                vec![],
            ));
        }
        entries.push(entry);
    }
    let tree = MerkleTree::from_leaf_hashes(entries.iter().map(LogEntry::leaf_hash));
    Ok((entries, tree))
}

fn root_at(tree: &MerkleTree, size: u64) -> Digest {
    tree.root(size).expect("size within tree")
}

/// Replays `entries` and re-checks every signed verdict and revocation at its
/// integration time. Returns the catalog and the verified distinct approvers
/// per module.
fn replay_verified(
    entries: &[LogEntry],
    ca_root: &PublicKey,
    authorities: &BTreeSet<String>,
) -> Result<(Catalog, BTreeMap<ModuleId, BTreeSet<String>>), Failure> {
    let catalog = replay(entries).map_err(|e| failed("ReplayFailure", e, vec![]))?;
    let mut approvers: BTreeMap<ModuleId, BTreeSet<String>> = BTreeMap::new();
    for entry in entries {
        let body = EventBody::from_entry(entry).map_err(|e| failed("ReplayFailure", e, vec![]))?;
        match body.event {
            Event::Review { module, verdict } => {
                verdict.verify(ca_root, entry.integrated_at).map_err(|e| {
                    failed(
                        variant_of(&e),
                        format!("verdict at log index {}: {e}", entry.index),
                        vec![("module", module.to_string().into())],
                    )
                })?;
                let submitter = catalog.get(&module).map(|r| r.certification.submitter.as_str()).unwrap_or_default();
                if verdict.decision == Decision::Approve && verdict.reviewer != submitter {
                    approvers.entry(module).or_default().insert(verdict.reviewer);
                }
            }
            Event::Revoke { module, order } => {
                let signer = verify_signature(&order.signature, &order.body_digest(), ca_root, entry.integrated_at)
                    .map_err(|e| {
                        failed("InvalidSignature", format!("revocation at log index {}: {e}", entry.index), vec![])
                    })?;
                if signer != order.authority || (!authorities.is_empty() && !authorities.contains(&signer)) {
                    return Err(failed(
                        "UnauthorizedRevocation",
                        format!("revocation of {module} signed by {signer}"),
                        vec![("module", module.to_string().into())],
                    ));
                }
            }
            _ => {}
        }
    }
    Ok((catalog, approvers))
}

fn variant_of(e: &hcmr_core::certify::CertifyError) -> &'static str {
    hcmr_core::registry::RegistryError::Certify(e.clone()).variant()
}

pub struct VerifyContext<'a> {
    pub api: &'a Api,
    pub ca_root: PublicKey,
    pub log_key: PublicKey,
    pub quorum: u32,
    pub authorities: &'a BTreeSet<String>,
}

/// Full client-side verification of `id` and its dependency closure.
pub fn verify_module(ctx: &VerifyContext, id: &ModuleId) -> Result<Document, Failure> {
    let head = fetch_head(ctx.api, &ctx.log_key)?;
    let (entries, tree) = fetch_entries(ctx.api, head.size)?;
    if root_at(&tree, head.size) != head.root_hash {
        return Err(failed("LogMismatch", "served entries do not hash to the signed root", vec![]));
    }
    let (catalog, approvers) = replay_verified(&entries, &ctx.ca_root, ctx.authorities)?;
    let module_doc = || ("module", Document::from(id.to_string()));
    if !catalog.contains(id) {
        return Err(failed("UnknownModule", format!("{id} is not in the log"), vec![module_doc()]));
    }

    let policy = ReviewPolicy { quorum: ctx.quorum, ..ReviewPolicy::default() };
    let mut closure = vec![id.clone()];
    closure.extend(catalog.closure(id));
    for m in &closure {
        let Some(rec) = catalog.get(m) else { continue };
        if rec.state() != CertState::Certified {
            continue;
        }
        let n = approvers.get(m).map_or(0, BTreeSet::len);
        if n < policy.quorum as usize {
            return Err(failed(
                "QuorumNotMet",
                format!("{m} has {n} verified approvals, policy requires {}", policy.quorum),
                vec![("module", m.to_string().into())],
            ));
        }
    }

    let store = RemoteStore(ctx.api.clone());
    let graph = compose::resolve(&catalog, &store, &TrustRootSet::single(ctx.ca_root), id).map_err(|e| {
        let module = e.module().unwrap_or(id).to_string();
        failed(e.variant(), e.to_string(), vec![("module", module.into())])
    })?;
    let level = compose::effective_assurance(&catalog, id)
        .map_err(|e| failed(e.variant(), e.to_string(), vec![module_doc()]))?;
    Ok(Document::map([
        module_doc(),
        ("verified", true.into()),
        ("assuranceLevel", level.name().into()),
        ("closure", Document::List(closure.iter().map(|m| m.to_string().into()).collect())),
        ("logSize", Document::Int(head.size as i64)),
        ("rootHash", head.root_hash.into()),
        ("graph", graph.to_document()),
    ]))
}

/// Checks that the log at `new` extends the log at `old`.
pub fn audit(
    api: &Api,
    log_key: &PublicKey,
    old: u64,
    new: Option<u64>,
    old_root: Option<Digest>,
) -> Result<Document, Failure> {
    let head = fetch_head(api, log_key)?;
    let new = new.unwrap_or(head.size);
    if old > new || new > head.size {
        return Err(Failure::Usage(format!("need old <= new <= {} (current size)", head.size)));
    }
    let (_, tree) = fetch_entries(api, new)?;
    let (old_hash, new_hash) = (root_at(&tree, old), root_at(&tree, new));
    if new == head.size && new_hash != head.root_hash {
        return Err(failed("LogMismatch", "served entries do not hash to the signed root", vec![]));
    }
    if let Some(expected) = old_root {
        if expected != old_hash {
            return Err(failed(
                "LogMismatch",
                format!("log at size {old} no longer has root {expected}"),
                vec![("oldRoot", old_hash.into())],
            ));
        }
    }
    let proof: ConsistencyProof =
        decode(&api.get(&format!("/v1/log/consistency?old={old}&new={new}"))?, "consistency proof")?;
    if proof.old_size != old || proof.new_size != new || !verify_consistency(&proof, &old_hash, &new_hash) {
        return Err(failed("InconsistentLog", format!("consistency proof {old} -> {new} does not verify"), vec![]));
    }
    Ok(Document::map([
        ("consistent", true.into()),
        ("oldSize", Document::Int(old as i64)),
        ("newSize", Document::Int(new as i64)),
        ("oldRoot", old_hash.into()),
        ("newRoot", new_hash.into()),
        ("proof", proof.to_document()),
    ]))
}

/// Fetches and verifies the inclusion proof of entry `index` in the tree of
/// `size` (the signed head's size by default).
pub fn inclusion(api: &Api, log_key: &PublicKey, index: u64, size: Option<u64>) -> Result<Document, Failure> {
    let head = fetch_head(api, log_key)?;
    let size = size.unwrap_or(head.size);
    if index >= size || size > head.size {
        return Err(Failure::Usage(format!("need index < size <= {} (current size)", head.size)));
    }
    let root = if size == head.size {
        head.root_hash
    } else {
        let (_, tree) = fetch_entries(api, size)?;
        root_at(&tree, size)
    };
    let entry = LogEntry::from_document(&api.get(&format!("/v1/log/entries/{index}"))?)
        .map_err(|e| failed("MalformedResponse", e, vec![]))?;
    let proof: InclusionProof =
        decode(&api.get(&format!("/v1/log/proof?index={index}&size={size}"))?, "inclusion proof")?;
    if entry.index != index
        || proof.leaf_index != index
        || proof.tree_size != size
        || !verify_inclusion(&proof, &entry.leaf_hash(), &root)
    {
        return Err(failed(
            "InclusionProofFailed",
            format!("entry {index} is not proven in the tree of size {size}"),
            vec![],
        ));
    }
    Ok(Document::map([
        ("verified", true.into()),
        ("leafHash", entry.leaf_hash().into()),
        ("rootHash", root.into()),
        ("proof", proof.to_document()),
    ]))
}
