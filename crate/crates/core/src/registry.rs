//! The registry engine. Every mutation is a canonical event appended to the
//! transparency log; the catalog is the fold of those events, so replaying
//! the log reproduces it exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{
    capped_tier, run_manifest, CertState, CertificationRecord, CertifyError, CheckResult, ReviewPolicy, ReviewVerdict,
    RevocationOrder, SandboxRunner, ValidationManifest, ValidationTranscript, VettingCheck, VettingReport,
};
use crate::compose::{
    self, composed_artifact, plan_materials, revalidate_plan, AssemblyPlan, Catalog, ComposeError, CompositionRecord,
    ModuleRecord, ResolutionConstraint, ResolvedGraph, SecurityAttributes,
};
use crate::contracts::{parse_contract, InterfaceContract};
use crate::digests::{
    canonicalize, content_digest, dependency_graph_digest, from_document, to_document, DependencyRef, Digest, Document,
    ModuleId,
};
use crate::encoding::base64_bytes;
use crate::provenance::{
    check_completeness, material_uri, verify_envelope, verify_envelope_signer, CompletenessPolicy, Envelope,
    TrustRootSet,
};
use crate::signing::PublicKey;
use crate::store::{ArtifactStore, FsArtifactStore, MemoryArtifactStore};
use crate::time::{Clock, Timestamp};
use crate::translog::{EntryKind, LogEntry, LogError, TransparencyLog};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("malformed submission: {0}")]
    MalformedSubmission(String),
    #[error("unknown module {0}")]
    UnknownModule(ModuleId),
    #[error("{0} already exists")]
    AlreadyExists(ModuleId),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("storage: {0}")]
    Storage(String),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
}

impl RegistryError {
    /// Name of the module-level error variant, for response bodies.
    pub fn variant(&self) -> &'static str {
        match self {
            RegistryError::MalformedRequest(_) => "MalformedRequest",
            RegistryError::MalformedSubmission(_) => "MalformedSubmission",
            RegistryError::UnknownModule(_) => "UnknownModule",
            RegistryError::AlreadyExists(_) => "AlreadyExists",
            RegistryError::Certify(e) => match e {
                CertifyError::SelfReview => "SelfReview",
                CertifyError::WrongState { .. } => "WrongState",
                CertifyError::DependencyUncertified(_) => "DependencyUncertified",
                CertifyError::UncertifiedInClosure(_) => "UncertifiedInClosure",
                CertifyError::UnauthorizedRevocation(_) => "UnauthorizedRevocation",
                CertifyError::InvalidSignature(_) => "InvalidSignature",
                CertifyError::IdentityMismatch { .. } => "IdentityMismatch",
                CertifyError::ModuleMismatch { .. } => "ModuleMismatch",
                CertifyError::MalformedManifest(_) => "MalformedManifest",
                CertifyError::MalformedPolicy(_) => "MalformedPolicy",
                CertifyError::SandboxUnavailable(_) => "SandboxUnavailable",
            },
            RegistryError::Compose(e) => e.variant(),
            RegistryError::Log(LogError::OutOfRange(_)) => "OutOfRange",
            RegistryError::Log(LogError::CorruptStore(_)) | RegistryError::CorruptStore(_) => "CorruptStore",
            RegistryError::Log(_) => "LogFailure",
            RegistryError::Storage(_) => "StorageFailure",
        }
    }
}

const NAME_LIMIT: usize = 128;

/// Module names double as path and URL segments.
pub fn valid_module_name(name: &str) -> bool {
    name.len() <= NAME_LIMIT
        && name.bytes().next().is_some_and(|b| b.is_ascii_alphanumeric())
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

/// A publication request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModuleSubmission {
    pub module: ModuleId,
    #[serde(with = "base64_bytes")]
    pub artifact: Vec<u8>,
    pub contract: Document,
    pub provenance: Envelope,
    #[serde(default)]
    pub dependencies: Vec<DependencyRef>,
    pub build_digests: Vec<Digest>,
    #[serde(default)]
    pub security_attributes: SecurityAttributes,
}

impl ModuleSubmission {
    pub fn from_document(doc: &Document) -> Result<Self, RegistryError> {
        let sub: ModuleSubmission =
            from_document(doc).map_err(|e| RegistryError::MalformedSubmission(e.to_string()))?;
        sub.validate()?;
        Ok(sub)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |s: &str| Err(RegistryError::MalformedSubmission(s.to_string()));
        if !valid_module_name(&self.module.name) {
            return bad("module name must be 1-128 of [A-Za-z0-9._-], starting alphanumeric");
        }
        if self.artifact.is_empty() {
            return bad("artifact is empty");
        }
        if self.build_digests.len() != 2 {
            return bad("exactly two build digests are required");
        }
        if self.dependencies.iter().any(|d| d.module_id() == self.module) {
            return bad("module depends on itself");
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("submission is representable")
    }
}

/// One registry mutation, as recorded in a log entry body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum Event {
    Submit {
        module: ModuleId,
        submitter: String,
        artifact_digest: Digest,
        contract: Document,
        security_attributes: SecurityAttributes,
        dependencies: Vec<DependencyRef>,
        dependency_digest: Digest,
        provenance_envelope: Envelope,
        build_digests: Vec<Digest>,
    },
    Vet {
        module: ModuleId,
        report: VettingReport,
    },
    Review {
        module: ModuleId,
        verdict: ReviewVerdict,
    },
    Validate {
        module: ModuleId,
        manifest_digest: Digest,
        transcript: ValidationTranscript,
        invariants_passed: bool,
        quorum: u32,
    },
    Certify {
        module: ModuleId,
        assurance_level: crate::certify::AssuranceLevel,
    },
    Revoke {
        module: ModuleId,
        order: RevocationOrder,
    },
    Compose {
        composed_digest: Digest,
        plan: AssemblyPlan,
        envelope: Envelope,
    },
}

impl Event {
    pub fn kind(&self) -> EntryKind {
        match self {
            Event::Submit { .. } | Event::Compose { .. } => EntryKind::SigningEvent,
            Event::Revoke { .. } => EntryKind::RevocationEvent,
            _ => EntryKind::CertificationEvent,
        }
    }

    pub fn module(&self) -> Option<&ModuleId> {
        match self {
            Event::Submit { module, .. }
            | Event::Vet { module, .. }
            | Event::Review { module, .. }
            | Event::Validate { module, .. }
            | Event::Certify { module, .. }
            | Event::Revoke { module, .. } => Some(module),
            Event::Compose { .. } => None,
        }
    }
}

/// Entry body: the event plus the entry's own index, time and kind, so the
/// leaf hash commits to all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EventBody {
    pub event: Event,
    pub index: u64,
    pub integrated_at: Timestamp,
    pub kind: EntryKind,
}

impl EventBody {
    pub fn from_entry(entry: &LogEntry) -> Result<Self, String> {
        let body: EventBody = from_document(&entry.body_document()).map_err(|e| e.to_string())?;
        if body.index != entry.index || body.integrated_at != entry.integrated_at || body.kind != entry.kind {
            return Err(format!("entry {} body disagrees with its envelope", entry.index));
        }
        if body.event.kind() != entry.kind {
            return Err(format!("entry {} has the wrong kind for its event", entry.index));
        }
        Ok(body)
    }
}

/// Folds one entry into the catalog. Returns the module it touched.
pub fn apply_entry(catalog: &mut Catalog, entry: &LogEntry) -> Result<Option<ModuleId>, String> {
    let body = EventBody::from_entry(entry)?;
    let (index, at) = (entry.index, entry.integrated_at);
    let fail = |e: CertifyError| format!("entry {index}: {e}");
    let touched = body.event.module().cloned();
    fn record<'c>(catalog: &'c mut Catalog, id: &ModuleId, index: u64) -> Result<&'c mut ModuleRecord, String> {
        catalog.get_mut(id).ok_or_else(|| format!("entry {index}: unknown module {id}"))
    }
    match body.event {
        Event::Submit {
            module,
            submitter,
            artifact_digest,
            contract,
            security_attributes,
            dependencies,
            dependency_digest,
            provenance_envelope,
            build_digests,
        } => {
            if catalog.contains(&module) {
                return Err(format!("entry {index}: {module} submitted twice"));
            }
            catalog.insert(ModuleRecord {
                certification: CertificationRecord::new(module.clone(), submitter, at, index),
                module,
                artifact_digest,
                contract,
                security_attributes,
                assurance_level: None,
                dependencies,
                dependency_digest,
                provenance_envelope,
                build_digests,
                log_index: index,
            });
        }
        Event::Vet { module, report } => {
            let r = record(catalog, &module, index)?;
            r.certification.apply_vetting(report, at, index).map_err(fail)?;
            r.log_index = index;
        }
        Event::Review { module, verdict } => {
            let r = record(catalog, &module, index)?;
            r.certification.apply_review(verdict, at, index).map_err(fail)?;
            r.log_index = index;
        }
        Event::Validate { module, transcript, invariants_passed, quorum, .. } => {
            let r = record(catalog, &module, index)?;
            let policy = ReviewPolicy { quorum, ..ReviewPolicy::default() };
            r.certification.apply_validation(transcript, invariants_passed, &policy, at, index).map_err(fail)?;
            r.log_index = index;
        }
        Event::Certify { module, assurance_level } => {
            let r = record(catalog, &module, index)?;
            r.certification.apply_certification(assurance_level, at, index).map_err(fail)?;
            r.assurance_level = Some(assurance_level);
            r.log_index = index;
        }
        Event::Revoke { module, order } => {
            let r = record(catalog, &module, index)?;
            r.certification.apply_revocation(order, at, index).map_err(fail)?;
            r.log_index = index;
        }
        Event::Compose { composed_digest, plan, envelope } => {
            catalog.push_composition(CompositionRecord { log_index: index, composed_digest, plan, envelope });
        }
    }
    Ok(touched)
}

pub fn replay<'a>(entries: impl IntoIterator<Item = &'a LogEntry>) -> Result<Catalog, String> {
    let mut catalog = Catalog::new();
    for entry in entries {
        apply_entry(&mut catalog, entry)?;
    }
    Ok(catalog)
}

#[derive(Debug, Clone)]
pub struct RegistryOptions {
    pub policy: ReviewPolicy,
    pub ca_root: PublicKey,
    pub completeness: CompletenessPolicy,
}

impl RegistryOptions {
    pub fn new(policy: ReviewPolicy, ca_root: PublicKey) -> Self {
        RegistryOptions { policy, ca_root, completeness: CompletenessPolicy::default() }
    }
}

/// A module awaiting human review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PendingReview {
    pub module: ModuleId,
    pub state: CertState,
    pub submitter: String,
    pub approvers: Vec<String>,
    pub approvals: usize,
    pub quorum: u32,
    pub vetting_passed: bool,
    pub submitted_at: Timestamp,
    pub log_index: u64,
}

pub const ARTIFACTS_DIR: &str = "artifacts";
pub const RECORDS_DIR: &str = "records";
pub const LOG_DIR: &str = "log";

pub struct Registry {
    log: TransparencyLog,
    artifacts: Arc<dyn ArtifactStore>,
    records_dir: Option<PathBuf>,
    options: RegistryOptions,
    roots: TrustRootSet,
    sandbox: Arc<dyn SandboxRunner>,
    catalog: RwLock<Arc<Catalog>>,
    gate: Mutex<()>,
}

impl Registry {
    /// A registry over an already opened log and store. The log is replayed
    /// to build the catalog.
    pub fn new(
        log: TransparencyLog,
        artifacts: Arc<dyn ArtifactStore>,
        records_dir: Option<PathBuf>,
        options: RegistryOptions,
        sandbox: Arc<dyn SandboxRunner>,
    ) -> Result<Self, RegistryError> {
        options.policy.validate()?;
        let catalog = replay(&log.entries(0, log.size())).map_err(RegistryError::CorruptStore)?;
        let registry = Registry {
            log,
            artifacts,
            records_dir,
            roots: TrustRootSet::single(options.ca_root),
            options,
            sandbox,
            catalog: RwLock::new(Arc::new(catalog)),
            gate: Mutex::new(()),
        };
        registry.check_snapshots()?;
        registry.resume_vetting()?;
        Ok(registry)
    }

    pub fn in_memory(
        log_key: crate::signing::ServiceKey,
        clock: Arc<dyn Clock>,
        options: RegistryOptions,
        artifacts: Arc<MemoryArtifactStore>,
        sandbox: Arc<dyn SandboxRunner>,
    ) -> Result<Self, RegistryError> {
        Self::new(TransparencyLog::in_memory(log_key, clock), artifacts, None, options, sandbox)
    }

    /// Opens the persistent layout under `root`: `artifacts/`, `records/`, `log/`.
    pub fn open(
        root: &Path,
        log_key: crate::signing::ServiceKey,
        clock: Arc<dyn Clock>,
        options: RegistryOptions,
        sandbox: Arc<dyn SandboxRunner>,
    ) -> Result<Self, RegistryError> {
        let log = TransparencyLog::open(&root.join(LOG_DIR), log_key, clock).map_err(|e| match e {
            LogError::CorruptStore(s) => RegistryError::CorruptStore(s),
            other => RegistryError::Log(other),
        })?;
        let artifacts = FsArtifactStore::open(&root.join(ARTIFACTS_DIR)).map_err(|e| RegistryError::Storage(e.0))?;
        let records = root.join(RECORDS_DIR);
        fs::create_dir_all(&records).map_err(|e| RegistryError::Storage(e.to_string()))?;
        Self::new(log, Arc::new(artifacts), Some(records), options, sandbox)
    }

    pub fn log(&self) -> &TransparencyLog {
        &self.log
    }

    pub fn options(&self) -> &RegistryOptions {
        &self.options
    }

    pub fn policy(&self) -> &ReviewPolicy {
        &self.options.policy
    }

    pub fn trust_roots(&self) -> &TrustRootSet {
        &self.roots
    }

    pub fn artifacts(&self) -> &dyn ArtifactStore {
        self.artifacts.as_ref()
    }

    pub fn catalog(&self) -> Arc<Catalog> {
        self.catalog.read().expect("catalog lock poisoned").clone()
    }

    pub fn module(&self, id: &ModuleId) -> Result<ModuleRecord, RegistryError> {
        self.catalog().get(id).cloned().ok_or_else(|| RegistryError::UnknownModule(id.clone()))
    }

    pub fn artifact(&self, digest: &Digest) -> Result<Option<Vec<u8>>, RegistryError> {
        self.artifacts.get(digest).map_err(|e| RegistryError::Storage(e.0))
    }

    fn snapshot_path(&self, id: &ModuleId) -> Option<PathBuf> {
        self.records_dir.as_ref().map(|d| d.join(&id.name).join(format!("{}.json", id.version)))
    }

    fn write_snapshot(&self, record: &ModuleRecord) -> Result<(), RegistryError> {
        let Some(path) = self.snapshot_path(&record.module) else { return Ok(()) };
        let io = |e: std::io::Error| RegistryError::Storage(format!("{}: {e}", path.display()));
        let dir = path.parent().expect("snapshot has a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        let mut f = tmp.as_file();
        f.write_all(&canonicalize(&record.to_document())).map_err(io)?;
        f.sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Compares stored record snapshots against the replayed catalog.
    fn check_snapshots(&self) -> Result<(), RegistryError> {
        let Some(dir) = &self.records_dir else { return Ok(()) };
        let catalog = self.catalog();
        let io = |e: std::io::Error| RegistryError::Storage(e.to_string());
        for name_dir in fs::read_dir(dir).map_err(io)? {
            let name_dir = name_dir.map_err(io)?;
            if !name_dir.file_type().map_err(io)?.is_dir() {
                continue;
            }
            let name = name_dir.file_name().to_string_lossy().into_owned();
            for file in fs::read_dir(name_dir.path()).map_err(io)? {
                let path = file.map_err(io)?.path();
                let Some(version) = path.file_name().and_then(|f| f.to_str()).and_then(|f| f.strip_suffix(".json"))
                else {
                    continue;
                };
                let id = version
                    .parse()
                    .map(|v| ModuleId::new(name.clone(), v))
                    .map_err(|_| RegistryError::CorruptStore(format!("unexpected record file {}", path.display())))?;
                let record = catalog
                    .get(&id)
                    .ok_or_else(|| RegistryError::CorruptStore(format!("record for {id} has no log history")))?;
                let stored = fs::read(&path).map_err(io)?;
                if stored != canonicalize(&record.to_document()) {
                    return Err(RegistryError::CorruptStore(format!("record for {id} differs from log replay")));
                }
            }
        }
        for record in catalog.records() {
            if !self.snapshot_path(&record.module).is_some_and(|p| p.exists()) {
                self.write_snapshot(record)?;
            }
        }
        Ok(())
    }

    /// Appends one event under the mutation gate. `build` sees the catalog
    /// and the index and time the entry will get; the event is applied to a
    /// copy first so an entry that would not replay is never written.
    fn commit(
        &self,
        kind: EntryKind,
        build: impl FnOnce(&Catalog, u64, Timestamp) -> Result<Event, RegistryError>,
    ) -> Result<(LogEntry, Arc<Catalog>), RegistryError> {
        let _gate = self.gate.lock().expect("gate poisoned");
        let current = self.catalog();
        let mut next = None;
        let (entry, _head) = self.log.try_append_with(kind, |index, integrated_at| {
            let event = build(&current, index, integrated_at)?;
            debug_assert_eq!(event.kind(), kind);
            let body = to_document(&EventBody { event, index, integrated_at, kind })
                .map_err(|e| RegistryError::Storage(e.to_string()))?;
            let trial = LogEntry { index, kind, body: canonicalize(&body), integrated_at };
            let mut catalog = (*current).clone();
            let touched = apply_entry(&mut catalog, &trial).map_err(RegistryError::CorruptStore)?;
            next = Some((catalog, touched));
            Ok::<_, RegistryError>(body)
        })?;
        let (catalog, touched) = next.expect("built during append");
        let catalog = Arc::new(catalog);
        *self.catalog.write().expect("catalog lock poisoned") = catalog.clone();
        if let Some(record) = touched.and_then(|id| catalog.get(&id).cloned()) {
            self.write_snapshot(&record)?;
        }
        Ok((entry, catalog))
    }

    fn record_in<'a>(catalog: &'a Catalog, id: &ModuleId) -> Result<&'a ModuleRecord, RegistryError> {
        catalog.get(id).ok_or_else(|| RegistryError::UnknownModule(id.clone()))
    }

    /// Publishes a submission and runs intake vetting. The returned record
    /// is `Vetted` or `Rejected`.
    pub fn submit(&self, submission: ModuleSubmission) -> Result<ModuleRecord, RegistryError> {
        submission.validate()?;
        if self.catalog().contains(&submission.module) {
            return Err(RegistryError::AlreadyExists(submission.module));
        }
        let artifact_digest = self.artifacts.put(&submission.artifact).map_err(|e| RegistryError::Storage(e.0))?;
        let roots = self.roots.clone();
        let sub = submission;
        let (_, catalog) = self.commit(EntryKind::SigningEvent, |catalog, _, at| {
            if catalog.contains(&sub.module) {
                return Err(RegistryError::AlreadyExists(sub.module.clone()));
            }
            let submitter = match verify_envelope_signer(&sub.provenance, &roots, at) {
                Ok(v) => v.signer,
                Err(_) => sub.provenance.signatures.first().map(|s| s.cert.subject.clone()).unwrap_or_default(),
            };
            let dependency_digest = dependency_graph_digest(&catalog.closure_refs(&sub.dependencies))
                .map_err(|e| RegistryError::MalformedSubmission(e.to_string()))?;
            Ok(Event::Submit {
                module: sub.module.clone(),
                submitter,
                artifact_digest,
                contract: sub.contract.clone(),
                security_attributes: sub.security_attributes.clone(),
                dependencies: sub.dependencies.clone(),
                dependency_digest,
                provenance_envelope: sub.provenance.clone(),
                build_digests: sub.build_digests.clone(),
            })
        })?;
        let record = Self::record_in(&catalog, &sub.module)?.clone();
        self.vet(&record.module)
    }

    fn vet(&self, id: &ModuleId) -> Result<ModuleRecord, RegistryError> {
        let (_, catalog) = self.commit(EntryKind::CertificationEvent, |catalog, _, _| {
            let record = Self::record_in(catalog, id)?;
            record.certification.check_vet()?;
            let report = vetting_report(catalog, record, &self.roots, &self.options.completeness);
            Ok(Event::Vet { module: id.clone(), report })
        })?;
        Ok(Self::record_in(&catalog, id)?.clone())
    }

    /// Vets anything left in `Submitted` by an interrupted publication.
    fn resume_vetting(&self) -> Result<(), RegistryError> {
        let pending: Vec<ModuleId> =
            self.catalog().records().filter(|r| r.state() == CertState::Submitted).map(|r| r.module.clone()).collect();
        for id in pending {
            self.vet(&id)?;
        }
        Ok(())
    }

    pub fn review(&self, id: &ModuleId, verdict: ReviewVerdict) -> Result<ModuleRecord, RegistryError> {
        if verdict.module != *id {
            return Err(CertifyError::ModuleMismatch { signed: verdict.module, target: id.clone() }.into());
        }
        let ca_root = self.options.ca_root;
        let (_, catalog) = self.commit(EntryKind::CertificationEvent, |catalog, _, at| {
            let record = Self::record_in(catalog, id)?;
            if !matches!(record.state(), CertState::Vetted | CertState::InReview) {
                return Err(CertifyError::WrongState { module: id.clone(), state: record.state() }.into());
            }
            verdict.verify(&ca_root, at)?;
            record.certification.check_review(&verdict.reviewer)?;
            Ok(Event::Review { module: id.clone(), verdict: verdict.clone() })
        })?;
        Ok(Self::record_in(&catalog, id)?.clone())
    }

    /// Runs the manifest in the sandbox and records the transcript. The
    /// module moves to `Validated` on a passing transcript, else `Rejected`.
    pub fn validate(
        &self,
        id: &ModuleId,
        manifest: &ValidationManifest,
    ) -> Result<(ModuleRecord, ValidationTranscript), RegistryError> {
        manifest.validate()?;
        let before = self.catalog();
        let record = Self::record_in(&before, id)?;
        record.certification.check_validation(&self.options.policy)?;
        let seen = record.certification.history.len();
        let artifact = self
            .artifact(&record.artifact_digest)?
            .filter(|b| content_digest(b) == record.artifact_digest)
            .ok_or_else(|| ComposeError::DigestMismatch(id.clone()))?;
        let invariants_passed = record.contract().is_some_and(|c| manifest.invariants_hold(&c));
        let transcript = run_manifest(manifest, &artifact, self.sandbox.as_ref())?;

        let policy = &self.options.policy;
        let (_, catalog) = self.commit(EntryKind::CertificationEvent, |catalog, _, _| {
            let record = Self::record_in(catalog, id)?;
            if record.certification.history.len() != seen {
                // another transition landed while the sandbox ran
                return Err(CertifyError::WrongState { module: id.clone(), state: record.state() }.into());
            }
            record.certification.check_validation(policy)?;
            Ok(Event::Validate {
                module: id.clone(),
                manifest_digest: manifest.to_document().digest(),
                transcript: transcript.clone(),
                invariants_passed,
                quorum: policy.quorum,
            })
        })?;
        Ok((Self::record_in(&catalog, id)?.clone(), transcript))
    }

    /// Assigns the assurance tier and certifies a validated module.
    pub fn certify(&self, id: &ModuleId) -> Result<ModuleRecord, RegistryError> {
        let policy = &self.options.policy;
        let (_, catalog) = self.commit(EntryKind::CertificationEvent, |catalog, _, _| {
            let record = Self::record_in(catalog, id)?;
            record.certification.check_finalize()?;
            let mut dep_tiers = Vec::new();
            for dep in &record.dependencies {
                let dep_id = dep.module_id();
                let tier = compose::effective_assurance(catalog, &dep_id)
                    .map_err(|_| CertifyError::DependencyUncertified(dep_id.clone()))?;
                dep_tiers.push(tier);
            }
            let level = capped_tier(record.certification.own_tier(policy), dep_tiers);
            Ok(Event::Certify { module: id.clone(), assurance_level: level })
        })?;
        Ok(Self::record_in(&catalog, id)?.clone())
    }

    pub fn revoke(&self, id: &ModuleId, order: RevocationOrder) -> Result<ModuleRecord, RegistryError> {
        if order.module != *id {
            return Err(CertifyError::ModuleMismatch { signed: order.module, target: id.clone() }.into());
        }
        let (ca_root, policy) = (self.options.ca_root, &self.options.policy);
        let (_, catalog) = self.commit(EntryKind::RevocationEvent, |catalog, _, at| {
            let record = Self::record_in(catalog, id)?;
            record.certification.check_revoke()?;
            order.verify(&ca_root, policy, at)?;
            Ok(Event::Revoke { module: id.clone(), order: order.clone() })
        })?;
        Ok(Self::record_in(&catalog, id)?.clone())
    }

    pub fn effective_assurance(&self, id: &ModuleId) -> Result<crate::certify::AssuranceLevel, RegistryError> {
        let catalog = self.catalog();
        Self::record_in(&catalog, id)?;
        Ok(compose::effective_assurance(&catalog, id)?)
    }

    pub fn discover(&self, constraints: &ResolutionConstraint) -> Vec<ModuleRecord> {
        let catalog = self.catalog();
        compose::discover(&catalog, constraints).into_iter().cloned().collect()
    }

    pub fn resolve(&self, root: &ModuleId) -> Result<ResolvedGraph, RegistryError> {
        Ok(compose::resolve(&self.catalog(), self.artifacts.as_ref(), &self.roots, root)?)
    }

    pub fn plan(
        &self,
        source: &InterfaceContract,
        goal: &InterfaceContract,
        constraints: &ResolutionConstraint,
        max_depth: usize,
    ) -> Result<AssemblyPlan, RegistryError> {
        Ok(compose::synthesize_plan(&self.catalog(), source, goal, constraints, max_depth)?)
    }

    /// Records a composed build: the plan must still hold and the envelope
    /// must attest exactly the composed artifact with the stage digests as
    /// materials.
    pub fn record_composition(
        &self,
        plan: &AssemblyPlan,
        envelope: &Envelope,
    ) -> Result<CompositionRecord, RegistryError> {
        let artifact = composed_artifact(plan);
        let composed_digest = self.artifacts.put(&artifact).map_err(|e| RegistryError::Storage(e.0))?;
        let roots = self.roots.clone();
        let (entry, catalog) = self.commit(EntryKind::SigningEvent, |catalog, _, at| {
            revalidate_plan(catalog, self.artifacts.as_ref(), &roots, plan)?;
            let bad = |s: String| RegistryError::Compose(ComposeError::Provenance(s));
            let statement = verify_envelope(envelope, &roots, at).map_err(|e| bad(e.to_string()))?;
            if statement.subject.len() != 1 || statement.subject[0].digest != composed_digest {
                return Err(bad("statement subject is not the composed artifact".into()));
            }
            let expected: Vec<(String, Digest)> =
                plan_materials(plan).iter().map(|d| (material_uri(&d.module_id()), d.digest)).collect();
            let actual: Vec<(String, Digest)> = statement.materials.iter().map(|m| (m.uri.clone(), m.digest)).collect();
            if expected != actual {
                return Err(bad("materials differ from the plan's stage digests".into()));
            }
            Ok(Event::Compose { composed_digest, plan: plan.clone(), envelope: envelope.clone() })
        })?;
        Ok(catalog
            .compositions()
            .iter()
            .find(|c| c.log_index == entry.index)
            .cloned()
            .expect("composition just recorded"))
    }

    /// Modules waiting on reviewers: Vetted, or InReview short of quorum.
    /// Newest submission first.
    pub fn pending_reviews(&self) -> Vec<PendingReview> {
        let catalog = self.catalog();
        let policy = &self.options.policy;
        let mut out: Vec<PendingReview> = catalog
            .records()
            .filter(|r| match r.state() {
                CertState::Vetted => true,
                CertState::InReview => !r.certification.quorum_met(policy),
                _ => false,
            })
            .map(|r| {
                let approvers: Vec<String> =
                    r.certification.distinct_approvers().into_iter().map(str::to_string).collect();
                PendingReview {
                    module: r.module.clone(),
                    state: r.state(),
                    submitter: r.certification.submitter.clone(),
                    approvals: approvers.len(),
                    approvers,
                    quorum: policy.quorum,
                    vetting_passed: r.certification.vetting_report.as_ref().is_some_and(VettingReport::passed),
                    submitted_at: r.submitted_at(),
                    log_index: r.certification.history[0].log_index,
                }
            })
            .collect();
        out.sort_by(|a, b| b.log_index.cmp(&a.log_index));
        out
    }
}

/// Intake vetting against the catalog as it stands.
pub fn vetting_report(
    catalog: &Catalog,
    record: &ModuleRecord,
    roots: &TrustRootSet,
    completeness: &CompletenessPolicy,
) -> VettingReport {
    let mut problems = Vec::new();
    for dep in &record.dependencies {
        let id = dep.module_id();
        match catalog.get(&id) {
            None => problems.push(format!("{id} is not in the catalog")),
            Some(r) if r.artifact_digest != dep.digest => {
                problems.push(format!("{id} digest {} differs from catalog {}", dep.digest, r.artifact_digest))
            }
            Some(r) if r.state() != CertState::Certified => problems.push(format!("{id} is {}", r.state())),
            Some(_) => {}
        }
    }
    let hygiene = check(VettingCheck::DependencyHygiene, problems);

    let reproducible = {
        let d = &record.build_digests;
        let mut problems = Vec::new();
        if d.len() != 2 || d[0] != d[1] {
            problems.push("independent build digests differ".to_string());
        } else if d[0] != record.artifact_digest {
            problems.push(format!("builds produced {} but the artifact is {}", d[0], record.artifact_digest));
        }
        check(VettingCheck::ReproducibleBuild, problems)
    };

    let provenance = {
        let mut problems = Vec::new();
        match verify_envelope(&record.provenance_envelope, roots, record.submitted_at()) {
            Err(e) => problems.push(e.to_string()),
            Ok(statement) => {
                if !statement.subject.iter().any(|s| s.digest == record.artifact_digest) {
                    problems.push("statement subject does not name the artifact".into());
                }
                let report = check_completeness(&statement, completeness, &record.dependencies);
                for f in &report.missing_fields {
                    problems.push(format!("missing {f}"));
                }
                for f in &report.dependency_findings {
                    problems.push(format!("material for {} {:?}", f.dependency, f.issue));
                }
            }
        }
        check(VettingCheck::Provenance, problems)
    };

    let contract = match parse_contract(&record.contract) {
        Ok(_) => check(VettingCheck::Contract, vec![]),
        Err(e) => check(VettingCheck::Contract, vec![e.to_string()]),
    };
    VettingReport { checks: vec![hygiene, reproducible, provenance, contract] }
}

fn check(check: VettingCheck, problems: Vec<String>) -> CheckResult {
    CheckResult { check, passed: problems.is_empty(), detail: problems.join("; ") }
}
