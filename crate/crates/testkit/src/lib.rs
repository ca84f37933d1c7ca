//! Deterministic fixtures for tests: a PKI, submission builder, scripted
//! sandbox and an in-memory registry with a manual clock.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use hcmr_core::certify::{
    CertifyError, Decision, ManifestEntry, ReviewPolicy, ReviewVerdict, RevocationOrder, RunOutcome, SandboxRunner,
    ValidationManifest,
};
use hcmr_core::compose::{ModuleRecord, SecurityAttributes};
use hcmr_core::contracts::{InterfaceContract, ParamType, Parameter};
use hcmr_core::digests::{content_digest, DependencyRef, Document, ModuleId};
use hcmr_core::provenance::{generate_statement, wrap_envelope};
use hcmr_core::registry::{ModuleSubmission, Registry, RegistryOptions};
use hcmr_core::signing::{CertificateAuthority, EphemeralSigner, IdentityProvider, ServiceKey, DEFAULT_AUDIENCE};
use hcmr_core::store::MemoryArtifactStore;
use hcmr_core::time::{Clock, ManualClock, Timestamp};

pub mod http;
pub mod oracle;

/// 2026-01-01T00:00:00Z
pub const T0: Timestamp = Timestamp::from_unix(1_767_225_600);

pub const SUBMITTER: &str = "dev@example.org";
pub const REVIEWERS: [&str; 4] = ["alice@example.org", "bob@example.org", "carol@example.org", "dan@example.org"];
pub const AUTHORITY: &str = "security@example.org";
pub const IDP_ISSUER: &str = "https://idp.test";

pub fn idp_key() -> ServiceKey {
    ServiceKey::from_seed([1; 32])
}

pub fn ca_key() -> ServiceKey {
    ServiceKey::from_seed([2; 32])
}

pub fn log_key() -> ServiceKey {
    ServiceKey::from_seed([3; 32])
}

pub struct Pki {
    pub idp: IdentityProvider,
    pub ca: CertificateAuthority,
}

impl Default for Pki {
    fn default() -> Self {
        Self::new()
    }
}

impl Pki {
    pub fn new() -> Self {
        let idp = IdentityProvider::new(IDP_ISSUER, idp_key());
        let ca = CertificateAuthority::new(ca_key(), IDP_ISSUER, idp.public_key());
        Pki { idp, ca }
    }

    pub fn signer(&self, subject: &str, now: Timestamp) -> EphemeralSigner {
        let a = self.idp.assert_identity(subject, DEFAULT_AUDIENCE, now, 300);
        EphemeralSigner::enroll(&self.ca, &a, now).expect("enrol")
    }

    pub fn token(&self, subject: &str, now: Timestamp) -> String {
        self.idp.assert_identity(subject, DEFAULT_AUDIENCE, now, 300).to_token()
    }
}

pub fn build_record() -> Document {
    Document::from_json_str(
        r#"{"builderId":"https://builder.test/ci","buildType":"https://builder.test/shell@v1","invocation":{"entry":"make"}}"#,
    )
    .expect("static document")
}

pub fn policy(quorum: u32) -> ReviewPolicy {
    ReviewPolicy { quorum, revocation_authorities: [AUTHORITY.to_string()].into() }
}

/// A contract with one boolean input and output, both named `kind`.
pub fn mirror(kind: &str) -> InterfaceContract {
    InterfaceContract::mirror(vec![Parameter::new(kind, ParamType::Boolean)])
}

/// A contract consuming boolean `from` and producing boolean `to`.
pub fn transform(from: &str, to: &str) -> InterfaceContract {
    InterfaceContract {
        inputs: vec![Parameter::new(from, ParamType::Boolean)],
        outputs: vec![Parameter::new(to, ParamType::Boolean)],
        invariants: vec![],
    }
}

pub fn artifact_for(name: &str, version: &str) -> Vec<u8> {
    format!("#!/bin/sh\necho {name}@{version}\n").into_bytes()
}

/// A well-formed submission signed by `SUBMITTER`.
pub fn submission(
    pki: &Pki,
    id: &ModuleId,
    contract: &InterfaceContract,
    deps: Vec<DependencyRef>,
    now: Timestamp,
) -> ModuleSubmission {
    let artifact = artifact_for(&id.name, &id.version.to_string());
    let digest = content_digest(&artifact);
    let statement = generate_statement(&build_record(), digest, &deps, now).expect("statement");
    let provenance = wrap_envelope(&statement, &pki.signer(SUBMITTER, now), now).expect("envelope");
    ModuleSubmission {
        module: id.clone(),
        artifact,
        contract: contract.to_document(),
        provenance,
        dependencies: deps,
        build_digests: vec![digest, digest],
        security_attributes: SecurityAttributes::default(),
    }
}

/// Manifest with one passing `true` command binding every contract input
/// to `true`.
pub fn passing_manifest(contract: &InterfaceContract) -> ValidationManifest {
    let fixtures: BTreeMap<String, Document> =
        contract.inputs.iter().map(|p| (p.name.clone(), Document::Bool(true))).collect();
    ValidationManifest {
        entries: vec![ManifestEntry {
            command: vec!["true".into()],
            expected_exit_code: 0,
            input_fixtures: fixtures,
            time_limit_seconds: 5,
        }],
    }
}

/// Sandbox that reports every command as exiting with `0`, unless the
/// command's first word is `false`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedSandbox;

impl SandboxRunner for ScriptedSandbox {
    fn run(&self, _: &[u8], entry: &ManifestEntry) -> Result<RunOutcome, CertifyError> {
        let code = if entry.command[0] == "false" { 1 } else { 0 };
        Ok(RunOutcome { exit_code: Some(code), stdout: vec![], wall: Duration::from_millis(1), timed_out: false })
    }
}

pub fn id(name: &str, version: &str) -> ModuleId {
    ModuleId::new(name, version.parse().expect("version"))
}

/// In-memory registry on a manual clock.
pub struct Fixture {
    pub pki: Pki,
    pub clock: ManualClock,
    pub artifacts: Arc<MemoryArtifactStore>,
    pub registry: Registry,
}

impl Fixture {
    pub fn new(quorum: u32) -> Self {
        Self::with_sandbox(quorum, Arc::new(ScriptedSandbox))
    }

    pub fn with_sandbox(quorum: u32, sandbox: Arc<dyn SandboxRunner>) -> Self {
        let pki = Pki::new();
        let clock = ManualClock::new(T0);
        let artifacts = Arc::new(MemoryArtifactStore::new());
        let registry = Registry::in_memory(
            log_key(),
            Arc::new(clock.clone()),
            RegistryOptions::new(policy(quorum), pki.ca.root()),
            artifacts.clone(),
            sandbox,
        )
        .expect("registry");
        Fixture { pki, clock, artifacts, registry }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn submission(
        &self,
        id: &ModuleId,
        contract: &InterfaceContract,
        deps: Vec<DependencyRef>,
    ) -> ModuleSubmission {
        submission(&self.pki, id, contract, deps, self.now())
    }

    pub fn verdict(&self, id: &ModuleId, reviewer: &str, decision: Decision) -> ReviewVerdict {
        ReviewVerdict::sign(id, decision, "reviewed", &self.pki.signer(reviewer, self.now()), self.now())
            .expect("verdict")
    }

    pub fn revocation(&self, id: &ModuleId, authority: &str) -> RevocationOrder {
        RevocationOrder::sign(id, "withdrawn", &self.pki.signer(authority, self.now()), self.now()).expect("order")
    }

    /// Runs a module through every stage to Certified.
    pub fn certify(&self, id: &ModuleId, contract: &InterfaceContract, deps: Vec<DependencyRef>) -> ModuleRecord {
        let rec = self.registry.submit(self.submission(id, contract, deps)).expect("submit");
        assert_eq!(rec.state().name(), "Vetted", "{:?}", rec.certification.vetting_report);
        let quorum = self.registry.policy().quorum as usize;
        for reviewer in &REVIEWERS[..quorum] {
            self.registry.review(id, self.verdict(id, reviewer, Decision::Approve)).expect("review");
        }
        self.registry.validate(id, &passing_manifest(contract)).expect("validate");
        self.registry.certify(id).expect("certify")
    }
}
