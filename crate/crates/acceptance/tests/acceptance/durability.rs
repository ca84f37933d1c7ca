//! Kill the registry process with SIGKILL after every acknowledged write and
//! check that a restart serves exactly the acknowledged state.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use hcmr_core::certify::{Decision, ReviewVerdict, RevocationOrder};
use hcmr_core::compose::{composed_artifact, plan_materials, AssemblyPlan};
use hcmr_core::contracts::InterfaceContract;
use hcmr_core::digests::{content_digest, DependencyRef, Document, ModuleId};
use hcmr_core::provenance::{generate_statement, wrap_envelope};
use hcmr_core::time::Timestamp;
use hcmr_testkit::http::{Client, Response};
use hcmr_testkit::{
    build_record, ca_key, id, log_key, mirror, passing_manifest, submission, transform, Pki, AUTHORITY, REVIEWERS,
    SUBMITTER,
};

use crate::env::{expect, path};

const WRITES: usize = 50;

struct Registry {
    config: std::path::PathBuf,
    child: Child,
    client: Client,
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

impl Registry {
    fn start(config: &Path) -> Self {
        let port = free_port();
        let child = Command::new(env!("CARGO_BIN_EXE_hcmr-registry"))
            .args(["serve", "--config"])
            .arg(config)
            .args(["--listen", &format!("127.0.0.1:{port}")])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let client = Client::new(format!("http://127.0.0.1:{port}"));
        let deadline = Instant::now() + Duration::from_secs(20);
        while client.try_get("/v1/log/head").is_err() {
            assert!(Instant::now() < deadline, "registry did not come up");
            std::thread::sleep(Duration::from_millis(20));
        }
        Registry { config: config.to_path_buf(), child, client }
    }

    fn crash_and_restart(&mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
        *self = Registry::start(&self.config.clone());
    }

    /// Tree size and root plus every module record and the catalog.
    fn snapshot(&self, modules: &[ModuleId]) -> Document {
        let head = self.client.get("/v1/log/head").doc();
        let mut parts = vec![
            ("size", head.get("size").unwrap().clone()),
            ("rootHash", head.get("rootHash").unwrap().clone()),
            ("catalog", self.client.get("/v1/catalog").doc()),
            ("pending", self.client.get("/v1/reviews/pending").doc()),
        ];
        let records = modules.iter().map(|m| self.client.get(&path(m)).doc()).collect();
        parts.push(("modules", Document::List(records)));
        Document::map(parts)
    }
}

impl Drop for Registry {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    ca_key().public_key().write_file(&dir.join("ca.pub")).unwrap();
    log_key().write_file(&dir.join("log.key")).unwrap();
    let text = format!(
        "storageRoot = \"storage\"\nlistenAddress = \"127.0.0.1:0\"\ncaRootPath = \"ca.pub\"\nlogKeyPath = \"log.key\"\n\n[reviewPolicy]\nquorum = 2\nrevocationAuthorities = [\"{AUTHORITY}\"]\n"
    );
    let config = dir.join("config.toml");
    std::fs::write(&config, text).unwrap();
    config
}

enum Write {
    Publish(ModuleId, InterfaceContract, Vec<DependencyRef>),
    Review(ModuleId, &'static str, Decision),
    Validate(ModuleId, InterfaceContract),
    Certify(ModuleId),
    Revoke(ModuleId),
    Compose(InterfaceContract, InterfaceContract),
}

fn script() -> (Vec<Write>, Vec<ModuleId>) {
    let mut writes = Vec::new();
    let mut modules = Vec::new();
    for i in 0..9 {
        let m = id(&format!("stage{i}"), "1.0.0");
        let c = transform(&format!("k{i}"), &format!("k{}", i + 1));
        writes.push(Write::Publish(m.clone(), c.clone(), vec![]));
        writes.push(Write::Review(m.clone(), REVIEWERS[0], Decision::Approve));
        writes.push(Write::Review(m.clone(), REVIEWERS[1], Decision::Approve));
        writes.push(Write::Validate(m.clone(), c));
        writes.push(Write::Certify(m.clone()));
        modules.push(m);
    }
    let doomed = id("doomed", "0.1.0");
    writes.push(Write::Publish(doomed.clone(), mirror("x"), vec![]));
    writes.push(Write::Review(doomed.clone(), REVIEWERS[2], Decision::Reject));
    writes.push(Write::Compose(mirror("k0"), mirror("k3")));
    writes.push(Write::Revoke(modules[8].clone()));
    modules.push(doomed);
    let app = id("app", "1.0.0");
    writes.push(Write::Publish(app.clone(), mirror("y"), vec![]));
    modules.push(app);
    (writes, modules)
}

fn perform(client: &Client, pki: &Pki, w: &Write) -> Response {
    let now = Timestamp::now();
    match w {
        Write::Publish(m, c, deps) => {
            client.post("/v1/modules", &submission(pki, m, c, deps.clone(), now).to_document())
        }
        Write::Review(m, who, d) => {
            let v = ReviewVerdict::sign(m, *d, "ok", &pki.signer(who, now), now).unwrap();
            client.post(&format!("{}/reviews", path(m)), &v.to_document())
        }
        Write::Validate(m, c) => client.post(&format!("{}/validate", path(m)), &passing_manifest(c).to_document()),
        Write::Certify(m) => client.post_empty(&format!("{}/certify", path(m))),
        Write::Revoke(m) => {
            let order = RevocationOrder::sign(m, "withdrawn", &pki.signer(AUTHORITY, now), now).unwrap();
            client.post(&format!("{}/revoke", path(m)), &order.to_document())
        }
        Write::Compose(source, goal) => {
            let req = Document::map([("source", source.to_document()), ("goal", goal.to_document())]);
            let r = client.post("/v1/plan", &req);
            expect(&r, 200, None);
            let plan = AssemblyPlan::from_document(&r.doc()).unwrap();
            let digest = content_digest(&composed_artifact(&plan));
            let statement = generate_statement(&build_record(), digest, &plan_materials(&plan), now).unwrap();
            let envelope = wrap_envelope(&statement, &pki.signer(SUBMITTER, now), now).unwrap();
            client.post(
                "/v1/compose",
                &Document::map([("plan", plan.to_document()), ("envelope", envelope.to_document())]),
            )
        }
    }
}

pub fn run() -> String {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let pki = Pki::new();
    let (writes, modules) = script();
    assert_eq!(writes.len(), WRITES);
    let mut registry = Registry::start(&config);
    for (i, w) in writes.iter().enumerate() {
        let r = perform(&registry.client, &pki, w);
        assert!((200..300).contains(&r.status), "write {i}: {} {}", r.status, String::from_utf8_lossy(&r.body));
        let before = registry.snapshot(&modules);
        registry.crash_and_restart();
        let after = registry.snapshot(&modules);
        assert_eq!(
            after.to_canonical_string(),
            before.to_canonical_string(),
            "write {i}: state changed across SIGKILL and restart"
        );
    }
    let size = registry.snapshot(&modules).get("size").and_then(Document::as_int).unwrap();
    format!("{WRITES} acknowledged writes, SIGKILL + restart after each: log head, catalog and records identical (final tree size {size})")
}
