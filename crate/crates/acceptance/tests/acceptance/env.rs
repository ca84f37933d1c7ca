//! A registry served over HTTP from a temporary store, driven by signed
//! requests built with the test PKI.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use hcmr_core::certify::{Decision, ReviewVerdict, RevocationOrder, SandboxRunner};
use hcmr_core::contracts::InterfaceContract;
use hcmr_core::digests::{DependencyRef, Document, ModuleId};
use hcmr_core::registry::{Registry, RegistryOptions};
use hcmr_core::signing::CertificateAuthority;
use hcmr_core::time::{Clock, ManualClock, Timestamp};
use hcmr_server::{AppState, ServerHandle};
use hcmr_testkit::http::{Client, Response};
use hcmr_testkit::{
    ca_key, log_key, passing_manifest, policy, submission, Pki, ScriptedSandbox, AUTHORITY, IDP_ISSUER, REVIEWERS, T0,
};

pub struct Env {
    pub dir: tempfile::TempDir,
    pub pki: Pki,
    pub clock: ManualClock,
    pub client: Client,
    _server: ServerHandle,
}

pub fn path(m: &ModuleId) -> String {
    format!("/v1/modules/{}/{}", m.name, m.version)
}

impl Env {
    pub fn new(quorum: u32) -> Self {
        Self::with_sandbox(quorum, Arc::new(ScriptedSandbox))
    }

    pub fn with_sandbox(quorum: u32, sandbox: Arc<dyn SandboxRunner>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let pki = Pki::new();
        let clock = ManualClock::new(T0);
        let registry = Registry::open(
            &dir.path().join("storage"),
            log_key(),
            Arc::new(clock.clone()),
            RegistryOptions::new(policy(quorum), pki.ca.root()),
            sandbox,
        )
        .unwrap();
        let ca = CertificateAuthority::new(ca_key(), IDP_ISSUER, pki.idp.public_key());
        let state = AppState { registry: Arc::new(registry), ca: Some(Arc::new(ca)), clock: Arc::new(clock.clone()) };
        let server = ServerHandle::start(state, "127.0.0.1:0").unwrap();
        let client = Client::new(server.url());
        Env { dir, pki, clock, client, _server: server }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn url(&self) -> &str {
        self.client.base()
    }

    pub fn publish(&self, m: &ModuleId, contract: &InterfaceContract, deps: Vec<DependencyRef>) -> Response {
        self.client.post("/v1/modules", &submission(&self.pki, m, contract, deps, self.now()).to_document())
    }

    pub fn review(&self, m: &ModuleId, reviewer: &str, decision: Decision) -> Response {
        let signer = self.pki.signer(reviewer, self.now());
        let verdict = ReviewVerdict::sign(m, decision, "reviewed", &signer, self.now()).unwrap();
        self.client.post(&format!("{}/reviews", path(m)), &verdict.to_document())
    }

    pub fn validate(&self, m: &ModuleId, contract: &InterfaceContract) -> Response {
        self.client.post(&format!("{}/validate", path(m)), &passing_manifest(contract).to_document())
    }

    pub fn certify(&self, m: &ModuleId) -> Response {
        self.client.post_empty(&format!("{}/certify", path(m)))
    }

    pub fn revoke(&self, m: &ModuleId, authority: &str) -> Response {
        let order = RevocationOrder::sign(m, "withdrawn", &self.pki.signer(authority, self.now()), self.now()).unwrap();
        self.client.post(&format!("{}/revoke", path(m)), &order.to_document())
    }

    pub fn resolve(&self, m: &ModuleId) -> Response {
        let body = Document::map([("name", m.name.as_str().into()), ("version", m.version.to_string().into())]);
        self.client.post("/v1/resolve", &body)
    }

    /// Runs every stage with `quorum` distinct reviewers and returns the
    /// dependency reference of the certified module.
    pub fn certify_fully(
        &self,
        m: &ModuleId,
        contract: &InterfaceContract,
        deps: Vec<DependencyRef>,
        quorum: usize,
    ) -> DependencyRef {
        expect(&self.publish(m, contract, deps), 201, None);
        for r in &REVIEWERS[..quorum] {
            expect(&self.review(m, r, Decision::Approve), 200, None);
        }
        expect(&self.validate(m, contract), 200, None);
        let rec = self.certify(m);
        expect(&rec, 200, None);
        let digest = rec.doc().get("artifactDigest").and_then(Document::as_str).unwrap().parse().unwrap();
        DependencyRef::new(m.name.clone(), m.version, digest).unwrap()
    }

    pub fn state(&self, m: &ModuleId) -> String {
        let doc = self.client.get(&path(m)).doc();
        doc.get("certification").and_then(|c| c.get("state")).and_then(Document::as_str).unwrap().to_string()
    }

    pub fn artifact_file(&self, digest: &hcmr_core::digests::Digest) -> PathBuf {
        self.dir.path().join("storage").join("artifacts").join(digest.to_hex())
    }

    /// Runs `hcmr` against this registry with the test trust roots.
    pub fn hcmr(&self, args: &[&str]) -> (i32, Document) {
        let home = self.dir.path().join("hcmr-home");
        if !home.exists() {
            std::fs::create_dir(&home).unwrap();
            self.pki.ca.root().write_file(&home.join("ca.pub")).unwrap();
            log_key().public_key().write_file(&home.join("log.pub")).unwrap();
            let config = format!("registry = \"{}\"\nrevocationAuthorities = [\"{AUTHORITY}\"]\n", self.url());
            std::fs::write(home.join("config"), config).unwrap();
        }
        let argv: Vec<String> = std::iter::once("hcmr").chain(args.iter().copied()).map(String::from).collect();
        let env = BTreeMap::from([("HCMR_HOME".to_string(), home.to_string_lossy().to_string())]);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = hcmr_cli::run(&argv, &env, &mut out, &mut err);
        let doc = Document::from_json_slice(out.trim_ascii_end())
            .unwrap_or_else(|e| panic!("hcmr {args:?}: {e}; stderr: {}", String::from_utf8_lossy(&err)));
        (code, doc)
    }
}

/// Asserts status and, when given, the error variant of a response.
pub fn expect(r: &Response, status: u16, error: Option<&str>) {
    let body = String::from_utf8_lossy(&r.body);
    assert_eq!(r.status, status, "{body}");
    if let Some(e) = error {
        assert_eq!(r.error(), e, "{body}");
    }
}

pub fn field(r: &Response, key: &str) -> String {
    match r.doc().get(key) {
        Some(Document::Str(s)) => s.clone(),
        Some(other) => other.to_canonical_string(),
        None => panic!("no `{key}` in {}", String::from_utf8_lossy(&r.body)),
    }
}
