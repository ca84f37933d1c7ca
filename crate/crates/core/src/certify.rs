//! Certification pipeline: intake vetting, quorum review, sandboxed
//! validation, final certification and revocation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::contracts::{eval_invariants, InterfaceContract};
use crate::digests::{canonicalize, content_digest, from_document, to_document, Digest, Document, ModuleId};
use crate::signing::{verify_signature, EphemeralSigner, PublicKey, SignatureBundle, SigningError};
use crate::time::Timestamp;

pub const DEFAULT_QUORUM: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertifyError {
    #[error("reviewer is the module submitter")]
    SelfReview,
    #[error("{module} is {state}, operation not allowed")]
    WrongState { module: ModuleId, state: CertState },
    #[error("dependency {0} is not certified")]
    DependencyUncertified(ModuleId),
    #[error("{0} in the dependency closure is not certified")]
    UncertifiedInClosure(ModuleId),
    #[error("`{0}` is not a revocation authority")]
    UnauthorizedRevocation(String),
    #[error("signature rejected: {0}")]
    InvalidSignature(SigningError),
    #[error("signed body names `{claimed}` but the certificate belongs to `{actual}`")]
    IdentityMismatch { claimed: String, actual: String },
    #[error("signed order is for {signed}, not {target}")]
    ModuleMismatch { signed: ModuleId, target: ModuleId },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed policy: {0}")]
    MalformedPolicy(String),
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CertState {
    Submitted,
    Vetted,
    InReview,
    Validated,
    Certified,
    Rejected,
    Revoked,
}

impl CertState {
    pub const ALL: [CertState; 7] = [
        CertState::Submitted,
        CertState::Vetted,
        CertState::InReview,
        CertState::Validated,
        CertState::Certified,
        CertState::Rejected,
        CertState::Revoked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CertState::Submitted => "Submitted",
            CertState::Vetted => "Vetted",
            CertState::InReview => "InReview",
            CertState::Validated => "Validated",
            CertState::Certified => "Certified",
            CertState::Rejected => "Rejected",
            CertState::Revoked => "Revoked",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, CertState::Rejected | CertState::Revoked)
    }
}

impl fmt::Display for CertState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CertState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CertState::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown state `{s}`"))
    }
}

/// The declared transition relation. Staying in a state is not a transition.
pub fn is_legal_transition(from: CertState, to: CertState) -> bool {
    use CertState::*;
    matches!(
        (from, to),
        (Submitted, Vetted)
            | (Vetted, InReview)
            | (InReview, Validated)
            | (Validated, Certified)
            | (Submitted | Vetted | InReview | Validated, Rejected)
            | (Certified, Revoked)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssuranceLevel {
    L0,
    L1,
    L2,
    L3,
}

impl AssuranceLevel {
    pub const ALL: [AssuranceLevel; 4] =
        [AssuranceLevel::L0, AssuranceLevel::L1, AssuranceLevel::L2, AssuranceLevel::L3];

    pub fn name(self) -> &'static str {
        match self {
            AssuranceLevel::L0 => "L0",
            AssuranceLevel::L1 => "L1",
            AssuranceLevel::L2 => "L2",
            AssuranceLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for AssuranceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssuranceLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssuranceLevel::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| format!("unknown assurance level `{s}`"))
    }
}

/// Tier earned by a module's own gates, before capping by dependencies.
pub fn own_tier(
    vetting_passed: bool,
    quorum_met: bool,
    validation_passed: bool,
    invariants_passed: bool,
) -> AssuranceLevel {
    match (vetting_passed, quorum_met, validation_passed && invariants_passed) {
        (false, _, _) => AssuranceLevel::L0,
        (true, false, _) => AssuranceLevel::L1,
        (true, true, false) => AssuranceLevel::L2,
        (true, true, true) => AssuranceLevel::L3,
    }
}

/// `own` capped by every tier in the dependency closure.
pub fn capped_tier(own: AssuranceLevel, closure: impl IntoIterator<Item = AssuranceLevel>) -> AssuranceLevel {
    closure.into_iter().fold(own, AssuranceLevel::min)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ReviewPolicy {
    pub quorum: u32,
    #[serde(default)]
    pub revocation_authorities: BTreeSet<String>,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        ReviewPolicy { quorum: DEFAULT_QUORUM, revocation_authorities: BTreeSet::new() }
    }
}

impl ReviewPolicy {
    pub fn new(quorum: u32, authorities: impl IntoIterator<Item = impl Into<String>>) -> Result<Self, CertifyError> {
        let policy = ReviewPolicy { quorum, revocation_authorities: authorities.into_iter().map(Into::into).collect() };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), CertifyError> {
        if self.quorum < 1 {
            return Err(CertifyError::MalformedPolicy("quorum must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_document(doc: &Document) -> Result<Self, CertifyError> {
        let policy: ReviewPolicy = from_document(doc).map_err(|e| CertifyError::MalformedPolicy(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("policy is representable")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Reject,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Reject => "reject",
        }
    }
}

fn module_document(id: &ModuleId) -> Document {
    Document::map([("name", id.name.as_str().into()), ("version", id.version.to_string().into())])
}

/// A reviewer's signed approve/reject decision on one module version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ReviewVerdict {
    pub module: ModuleId,
    pub reviewer: String,
    pub decision: Decision,
    pub rationale: String,
    pub signature: SignatureBundle,
}

impl ReviewVerdict {
    /// The document whose digest the reviewer signs.
    pub fn body(module: &ModuleId, reviewer: &str, decision: Decision, rationale: &str) -> Document {
        Document::map([
            ("decision", decision.name().into()),
            ("module", module_document(module)),
            ("rationale", rationale.into()),
            ("reviewer", reviewer.into()),
        ])
    }

    pub fn body_digest(&self) -> Digest {
        Self::body(&self.module, &self.reviewer, self.decision, &self.rationale).digest()
    }

    pub fn sign(
        module: &ModuleId,
        decision: Decision,
        rationale: &str,
        signer: &EphemeralSigner,
        now: Timestamp,
    ) -> Result<Self, SigningError> {
        let reviewer = signer.subject().to_string();
        let digest = Self::body(module, &reviewer, decision, rationale).digest();
        Ok(ReviewVerdict {
            module: module.clone(),
            reviewer,
            decision,
            rationale: rationale.to_string(),
            signature: signer.sign_artifact(&digest, now)?,
        })
    }

    /// Checks the signature at `at` and that the signer is the named reviewer.
    pub fn verify(&self, ca_root: &PublicKey, at: Timestamp) -> Result<(), CertifyError> {
        let subject = verify_signature(&self.signature, &self.body_digest(), ca_root, at)
            .map_err(CertifyError::InvalidSignature)?;
        if subject != self.reviewer {
            return Err(CertifyError::IdentityMismatch { claimed: self.reviewer.clone(), actual: subject });
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("verdict is representable")
    }

    pub fn from_document(doc: &Document) -> Result<Self, String> {
        from_document(doc).map_err(|e| e.to_string())
    }
}

/// Signed instruction to withdraw a module's certification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RevocationOrder {
    pub module: ModuleId,
    pub authority: String,
    pub reason: String,
    pub signature: SignatureBundle,
}

impl RevocationOrder {
    pub fn body(module: &ModuleId, authority: &str, reason: &str) -> Document {
        Document::map([
            ("action", "revoke".into()),
            ("authority", authority.into()),
            ("module", module_document(module)),
            ("reason", reason.into()),
        ])
    }

    pub fn body_digest(&self) -> Digest {
        Self::body(&self.module, &self.authority, &self.reason).digest()
    }

    pub fn sign(
        module: &ModuleId,
        reason: &str,
        signer: &EphemeralSigner,
        now: Timestamp,
    ) -> Result<Self, SigningError> {
        let authority = signer.subject().to_string();
        let digest = Self::body(module, &authority, reason).digest();
        Ok(RevocationOrder {
            module: module.clone(),
            authority,
            reason: reason.to_string(),
            signature: signer.sign_artifact(&digest, now)?,
        })
    }

    /// Signature, identity and authority checks.
    pub fn verify(&self, ca_root: &PublicKey, policy: &ReviewPolicy, at: Timestamp) -> Result<(), CertifyError> {
        let subject = verify_signature(&self.signature, &self.body_digest(), ca_root, at)
            .map_err(CertifyError::InvalidSignature)?;
        if subject != self.authority {
            return Err(CertifyError::IdentityMismatch { claimed: self.authority.clone(), actual: subject });
        }
        if !policy.revocation_authorities.contains(&self.authority) {
            return Err(CertifyError::UnauthorizedRevocation(self.authority.clone()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("order is representable")
    }

    pub fn from_document(doc: &Document) -> Result<Self, String> {
        from_document(doc).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VettingCheck {
    DependencyHygiene,
    ReproducibleBuild,
    Provenance,
    Contract,
}

impl VettingCheck {
    pub fn name(self) -> &'static str {
        match self {
            VettingCheck::DependencyHygiene => "dependency-hygiene",
            VettingCheck::ReproducibleBuild => "reproducible-build",
            VettingCheck::Provenance => "provenance",
            VettingCheck::Contract => "contract",
        }
    }
}

impl fmt::Display for VettingCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CheckResult {
    pub check: VettingCheck,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VettingReport {
    pub checks: Vec<CheckResult>,
}

impl VettingReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<VettingCheck> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ManifestEntry {
    pub command: Vec<String>,
    pub expected_exit_code: i32,
    #[serde(default)]
    pub input_fixtures: BTreeMap<String, Document>,
    pub time_limit_seconds: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Name of the file the artifact bytes are written to in each workdir.
pub const ARTIFACT_FILE: &str = "artifact";

fn valid_fixture_name(name: &str) -> bool {
    !name.is_empty()
        && name != ARTIFACT_FILE
        && !name.starts_with('.')
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b"_-.".contains(&b))
}

impl ValidationManifest {
    pub fn from_document(doc: &Document) -> Result<Self, CertifyError> {
        let manifest: ValidationManifest =
            from_document(doc).map_err(|e| CertifyError::MalformedManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), CertifyError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.command.is_empty() {
                return Err(CertifyError::MalformedManifest(format!("entries[{i}]: empty command")));
            }
            if e.time_limit_seconds == 0 {
                return Err(CertifyError::MalformedManifest(format!("entries[{i}]: time limit must be positive")));
            }
            if let Some(bad) = e.input_fixtures.keys().find(|k| !valid_fixture_name(k)) {
                return Err(CertifyError::MalformedManifest(format!("entries[{i}]: bad fixture name `{bad}`")));
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("manifest is representable")
    }

    /// True when every invariant holds on every entry's fixture binding.
    pub fn invariants_hold(&self, contract: &InterfaceContract) -> bool {
        self.entries.iter().all(|e| {
            eval_invariants(contract, &e.input_fixtures).is_ok_and(|results| results.iter().all(|(_, ok)| *ok))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TranscriptEntry {
    pub command: Vec<String>,
    /// `None` when the process was killed by a signal.
    pub exit_code: Option<i32>,
    pub output_digest: Digest,
    /// Decimal seconds, millisecond precision.
    pub wall_seconds: String,
    pub timed_out: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationTranscript {
    pub entries: Vec<TranscriptEntry>,
    pub pass: bool,
}

impl ValidationTranscript {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("transcript is representable")
    }

    pub fn digest(&self) -> Digest {
        self.to_document().digest()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub exit_code: Option<i32>,
    pub stdout: Vec<u8>,
    pub wall: Duration,
    pub timed_out: bool,
}

/// Executes one manifest command in isolation.
pub trait SandboxRunner: Send + Sync {
    fn run(&self, artifact: &[u8], entry: &ManifestEntry) -> Result<RunOutcome, CertifyError>;
}

pub fn run_manifest(
    manifest: &ValidationManifest,
    artifact: &[u8],
    runner: &dyn SandboxRunner,
) -> Result<ValidationTranscript, CertifyError> {
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let out = runner.run(artifact, entry)?;
        let passed = !out.timed_out && out.exit_code == Some(entry.expected_exit_code);
        entries.push(TranscriptEntry {
            command: entry.command.clone(),
            exit_code: out.exit_code,
            output_digest: content_digest(&out.stdout),
            wall_seconds: format!("{:.3}", out.wall.as_secs_f64()),
            timed_out: out.timed_out,
            passed,
        });
    }
    let pass = entries.iter().all(|e| e.passed);
    Ok(ValidationTranscript { entries, pass })
}

/// Runs commands in a fresh temp directory inside a new network namespace
/// (`unshare --net`), with a cleared environment and a wall-clock limit.
#[derive(Debug, Default)]
pub struct ProcessSandbox {
    probe: OnceLock<Result<(), String>>,
    unisolated: bool,
}

const SANDBOX_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

impl ProcessSandbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same workdir and limits, but sharing the host network. Only useful as
    /// a control in tests.
    pub fn without_network_isolation() -> Self {
        ProcessSandbox { probe: OnceLock::new(), unisolated: true }
    }

    pub fn check_available(&self) -> Result<(), CertifyError> {
        if self.unisolated {
            return Ok(());
        }
        self.probe
            .get_or_init(|| {
                let status = Command::new("unshare")
                    .args(["--net", "--map-root-user", "true"])
                    .stdin(Stdio::null())
                    .stdout(Stdio::null())
                    .stderr(Stdio::null())
                    .status();
                match status {
                    Ok(s) if s.success() => Ok(()),
                    Ok(s) => Err(format!("unshare exited with {s}")),
                    Err(e) => Err(format!("cannot run unshare: {e}")),
                }
            })
            .clone()
            .map_err(CertifyError::SandboxUnavailable)
    }
}

fn kill_group(pgid: u32) {
    // SAFETY: kill(2) with a negative pid only sends a signal
    unsafe {
        libc::kill(-(pgid as i32), libc::SIGKILL);
    }
}

impl SandboxRunner for ProcessSandbox {
    fn run(&self, artifact: &[u8], entry: &ManifestEntry) -> Result<RunOutcome, CertifyError> {
        self.check_available()?;
        let io = |e: std::io::Error| CertifyError::SandboxUnavailable(format!("workdir: {e}"));
        let dir = tempfile::tempdir().map_err(io)?;
        let artifact_path = dir.path().join(ARTIFACT_FILE);
        fs::write(&artifact_path, artifact).map_err(io)?;
        fs::set_permissions(&artifact_path, fs::Permissions::from_mode(0o755)).map_err(io)?;
        for (name, value) in &entry.input_fixtures {
            let bytes = match value {
                Document::Str(s) => s.clone().into_bytes(),
                other => canonicalize(other),
            };
            fs::write(dir.path().join(name), bytes).map_err(io)?;
        }

        let mut cmd = if self.unisolated {
            let mut c = Command::new(&entry.command[0]);
            c.args(&entry.command[1..]);
            c
        } else {
            let mut c = Command::new("unshare");
            c.args(["--net", "--map-root-user", "--"]).args(&entry.command);
            c
        };
        cmd.current_dir(dir.path())
            .env_clear()
            .env("PATH", SANDBOX_PATH)
            .env("HOME", dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0);

        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(_) => {
                // a missing program is a failing run, not a sandbox fault
                return Ok(RunOutcome {
                    exit_code: Some(127),
                    stdout: Vec::new(),
                    wall: started.elapsed(),
                    timed_out: false,
                });
            }
        };
        let pgid = child.id();
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });

        let limit = Duration::from_secs(entry.time_limit_seconds);
        let waited = child.wait_timeout(limit).map_err(io)?;
        let (status, timed_out) = match waited {
            Some(status) => (Some(status), false),
            None => {
                kill_group(pgid);
                (child.wait().ok(), true)
            }
        };
        let wall = started.elapsed();
        // stragglers that inherited stdout would keep the reader blocked
        kill_group(pgid);
        let stdout = reader.join().unwrap_or_default();
        let exit_code = if timed_out { None } else { status.and_then(|s| s.code()) };
        Ok(RunOutcome { exit_code, stdout, wall, timed_out })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct HistoryEntry {
    pub state: CertState,
    pub timestamp: Timestamp,
    pub log_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
}

/// Lifecycle state of one module version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CertificationRecord {
    pub module: ModuleId,
    pub submitter: String,
    pub state: CertState,
    pub vetting_report: Option<VettingReport>,
    pub approvals: Vec<ReviewVerdict>,
    pub validation_transcript: Option<ValidationTranscript>,
    pub invariants_passed: Option<bool>,
    pub assurance_level: Option<AssuranceLevel>,
    pub rejection: Option<String>,
    pub revocation: Option<RevocationOrder>,
    pub history: Vec<HistoryEntry>,
}

impl CertificationRecord {
    pub fn new(module: ModuleId, submitter: impl Into<String>, at: Timestamp, log_index: u64) -> Self {
        CertificationRecord {
            module,
            submitter: submitter.into(),
            state: CertState::Submitted,
            vetting_report: None,
            approvals: Vec::new(),
            validation_transcript: None,
            invariants_passed: None,
            assurance_level: None,
            rejection: None,
            revocation: None,
            history: vec![HistoryEntry { state: CertState::Submitted, timestamp: at, log_index, digest: None }],
        }
    }

    fn wrong_state(&self) -> CertifyError {
        CertifyError::WrongState { module: self.module.clone(), state: self.state }
    }

    fn push(&mut self, state: CertState, at: Timestamp, log_index: u64, digest: Option<Digest>) {
        debug_assert!(state == self.state || is_legal_transition(self.state, state));
        self.state = state;
        self.history.push(HistoryEntry { state, timestamp: at, log_index, digest });
    }

    /// Distinct approving identities other than the submitter.
    pub fn distinct_approvers(&self) -> BTreeSet<&str> {
        self.approvals
            .iter()
            .filter(|v| v.decision == Decision::Approve && v.reviewer != self.submitter)
            .map(|v| v.reviewer.as_str())
            .collect()
    }

    pub fn quorum_met(&self, policy: &ReviewPolicy) -> bool {
        self.distinct_approvers().len() >= policy.quorum as usize
    }

    pub fn check_vet(&self) -> Result<(), CertifyError> {
        if self.state != CertState::Submitted {
            return Err(self.wrong_state());
        }
        Ok(())
    }

    pub fn apply_vetting(&mut self, report: VettingReport, at: Timestamp, log_index: u64) -> Result<(), CertifyError> {
        self.check_vet()?;
        let next = if report.passed() {
            CertState::Vetted
        } else {
            let names: Vec<&str> = report.failing().into_iter().map(VettingCheck::name).collect();
            self.rejection = Some(format!("vetting failed: {}", names.join(", ")));
            CertState::Rejected
        };
        self.vetting_report = Some(report);
        self.push(next, at, log_index, None);
        Ok(())
    }

    pub fn check_review(&self, reviewer: &str) -> Result<(), CertifyError> {
        if !matches!(self.state, CertState::Vetted | CertState::InReview) {
            return Err(self.wrong_state());
        }
        if reviewer == self.submitter {
            return Err(CertifyError::SelfReview);
        }
        Ok(())
    }

    /// Records a verdict, replacing any earlier one by the same reviewer.
    pub fn apply_review(&mut self, verdict: ReviewVerdict, at: Timestamp, log_index: u64) -> Result<(), CertifyError> {
        self.check_review(&verdict.reviewer)?;
        let digest = verdict.body_digest();
        let decision = verdict.decision;
        self.approvals.retain(|v| v.reviewer != verdict.reviewer);
        let reviewer = verdict.reviewer.clone();
        self.approvals.push(verdict);
        let next = match decision {
            Decision::Reject => {
                self.rejection = Some(format!("rejected in review by {reviewer}"));
                CertState::Rejected
            }
            Decision::Approve => CertState::InReview,
        };
        self.push(next, at, log_index, Some(digest));
        Ok(())
    }

    pub fn check_validation(&self, policy: &ReviewPolicy) -> Result<(), CertifyError> {
        if self.state != CertState::InReview || !self.quorum_met(policy) {
            return Err(self.wrong_state());
        }
        Ok(())
    }

    pub fn apply_validation(
        &mut self,
        transcript: ValidationTranscript,
        invariants_passed: bool,
        policy: &ReviewPolicy,
        at: Timestamp,
        log_index: u64,
    ) -> Result<(), CertifyError> {
        self.check_validation(policy)?;
        let digest = transcript.digest();
        let next = if transcript.pass {
            CertState::Validated
        } else {
            let failed = transcript.entries.iter().filter(|e| !e.passed).count();
            self.rejection = Some(format!("validation failed: {failed} of {} entries", transcript.entries.len()));
            CertState::Rejected
        };
        self.validation_transcript = Some(transcript);
        self.invariants_passed = Some(invariants_passed);
        self.push(next, at, log_index, Some(digest));
        Ok(())
    }

    /// The module's own tier under `policy`, ignoring dependencies.
    pub fn own_tier(&self, policy: &ReviewPolicy) -> AssuranceLevel {
        own_tier(
            self.vetting_report.as_ref().is_some_and(VettingReport::passed),
            self.quorum_met(policy),
            self.validation_transcript.as_ref().is_some_and(|t| t.pass),
            self.invariants_passed.unwrap_or(false),
        )
    }

    pub fn check_finalize(&self) -> Result<(), CertifyError> {
        if self.state != CertState::Validated {
            return Err(self.wrong_state());
        }
        Ok(())
    }

    pub fn apply_certification(
        &mut self,
        level: AssuranceLevel,
        at: Timestamp,
        log_index: u64,
    ) -> Result<(), CertifyError> {
        self.check_finalize()?;
        self.assurance_level = Some(level);
        self.push(CertState::Certified, at, log_index, None);
        Ok(())
    }

    pub fn check_revoke(&self) -> Result<(), CertifyError> {
        if self.state != CertState::Certified {
            return Err(self.wrong_state());
        }
        Ok(())
    }

    pub fn apply_revocation(
        &mut self,
        order: RevocationOrder,
        at: Timestamp,
        log_index: u64,
    ) -> Result<(), CertifyError> {
        self.check_revoke()?;
        let digest = order.body_digest();
        self.revocation = Some(order);
        self.push(CertState::Revoked, at, log_index, Some(digest));
        Ok(())
    }

    /// Every consecutive pair of history states is legal or a self-loop.
    pub fn history_is_legal(&self) -> bool {
        self.history.first().is_some_and(|h| h.state == CertState::Submitted)
            && self.history.windows(2).all(|w| w[0].state == w[1].state || is_legal_transition(w[0].state, w[1].state))
    }
}
