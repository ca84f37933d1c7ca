use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::Arc;

use hcmr_core::certify::{Decision, ManifestEntry, ProcessSandbox, SandboxRunner};
use hcmr_core::digests::Document;
use hcmr_testkit::{id, mirror, passing_manifest, AUTHORITY, REVIEWERS};

use crate::env::{expect, field, path, Env};

fn str_field<'a>(doc: &'a Document, key: &str) -> &'a str {
    doc.get(key).and_then(Document::as_str).unwrap_or_default()
}

/// Post-certification tampering of a vendor artifact.
fn solarwinds() -> String {
    let env = Env::new(2);
    let orion = id("orion-platform", "2020.2.1");
    let dep = env.certify_fully(&orion, &mirror("net"), vec![], 2);
    let customer = id("customer-portal", "1.0.0");
    env.certify_fully(&customer, &mirror("web"), vec![dep.clone()], 2);
    assert_eq!(env.hcmr(&["verify", "customer-portal", "1.0.0"]).0, 0);

    let file = env.artifact_file(&dep.digest);
    let mut bytes = std::fs::read(&file).unwrap();
    bytes.extend_from_slice(b"# SUNBURST\n");
    std::fs::write(&file, bytes).unwrap();
    for m in [&orion, &customer] {
        let r = env.resolve(m);
        expect(&r, 422, Some("DigestMismatch"));
        assert_eq!(field(&r, "module"), "orion-platform@2020.2.1");
    }
    let (code, doc) = env.hcmr(&["verify", "customer-portal", "1.0.0"]);
    assert_eq!((code, str_field(&doc, "error")), (1, "DigestMismatch"));
    "DigestMismatch at resolve and hcmr verify".into()
}

/// Revoking a transitive dependency blocks every dependent.
fn log4shell() -> String {
    let env = Env::new(2);
    let log4j = id("log4j-core", "2.14.1");
    let l = env.certify_fully(&log4j, &mirror("log"), vec![], 2);
    let framework = env.certify_fully(&id("web-framework", "5.3.0"), &mirror("web"), vec![l.clone()], 2);
    let service = id("payments-service", "1.0.0");
    env.certify_fully(&service, &mirror("pay"), vec![framework], 2);
    let direct = id("audit-logger", "0.9.0");
    env.certify_fully(&direct, &mirror("audit"), vec![l], 2);
    let bystander = id("json-parser", "2.0.0");
    env.certify_fully(&bystander, &mirror("json"), vec![], 2);
    assert_eq!(env.hcmr(&["verify", "payments-service", "1.0.0"]).0, 0);

    expect(&env.revoke(&log4j, REVIEWERS[0]), 401, Some("UnauthorizedRevocation"));
    expect(&env.revoke(&log4j, AUTHORITY), 200, None);
    for m in [&log4j, &id("web-framework", "5.3.0"), &service, &direct] {
        let r = env.resolve(m);
        expect(&r, 422, Some("RevokedDependency"));
        assert_eq!(field(&r, "module"), "log4j-core@2.14.1");
    }
    expect(&env.resolve(&bystander), 200, None);
    let (code, doc) = env.hcmr(&["verify", "payments-service", "1.0.0"]);
    assert_eq!((code, str_field(&doc, "error")), (1, "RevokedDependency"));
    assert_eq!(str_field(&doc, "module"), "log4j-core@2.14.1");
    assert_eq!(env.hcmr(&["verify", "json-parser", "2.0.0"]).0, 0);
    "4 dependents blocked with RevokedDependency; hcmr verify exits 1".into()
}

/// Serves a canned second-stage payload to any local connection.
fn stage_two_server() -> u16 {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    std::thread::spawn(move || {
        for mut s in listener.incoming().flatten() {
            let mut buf = [0u8; 1024];
            let _ = s.read(&mut buf);
            let _ = s.write_all(b"HTTP/1.0 200 OK\r\nContent-Length: 5\r\n\r\nstage");
        }
    });
    port
}

/// A build step that fetches a payload over the network fails validation.
fn xz() -> String {
    let sandbox = ProcessSandbox::new();
    sandbox.check_available().expect("sandbox available");
    let port = stage_two_server();
    let fetch = ManifestEntry {
        command: vec![
            "curl".into(),
            "-sf".into(),
            "--max-time".into(),
            "3".into(),
            format!("http://127.0.0.1:{port}/stage2"),
        ],
        expected_exit_code: 0,
        input_fixtures: BTreeMap::new(),
        time_limit_seconds: 10,
    };
    let control = ProcessSandbox::without_network_isolation().run(b"", &fetch).unwrap();
    assert_eq!(control.exit_code, Some(0), "fixture must be reachable outside the sandbox");

    let env = Env::with_sandbox(2, Arc::new(sandbox));
    let m = id("xz-utils", "5.6.1");
    expect(&env.publish(&m, &mirror("x"), vec![]), 201, None);
    for r in &REVIEWERS[..2] {
        expect(&env.review(&m, r, Decision::Approve), 200, None);
    }
    let mut manifest = passing_manifest(&mirror("x"));
    manifest.entries.push(fetch);
    let r = env.client.post(&format!("{}/validate", path(&m)), &manifest.to_document());
    expect(&r, 422, Some("ValidationFailed"));
    expect(&env.certify(&m), 409, Some("WrongState"));
    assert_eq!(env.state(&m), "Rejected");
    "network step fails in sandbox (ValidationFailed); never Certified".into()
}

fn single_approver() -> String {
    let env = Env::new(2);
    let m = id("jia-tan-module", "1.0.0");
    expect(&env.publish(&m, &mirror("x"), vec![]), 201, None);
    expect(&env.review(&m, REVIEWERS[0], Decision::Approve), 200, None);
    expect(&env.validate(&m, &mirror("x")), 409, Some("WrongState"));
    expect(&env.certify(&m), 409, Some("WrongState"));
    assert_ne!(env.state(&m), "Certified");
    "one approval under quorum 2 cannot certify (WrongState)".into()
}

pub fn run() -> String {
    let cases: [(&str, fn() -> String); 4] =
        [("SolarWinds", solarwinds), ("Log4Shell", log4shell), ("XZ", xz), ("single approver", single_approver)];
    let mut lines = Vec::new();
    for (name, case) in cases {
        let detail = std::panic::catch_unwind(case).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().unwrap_or_default();
            panic!("{name}: {msg}")
        });
        lines.push(format!("{name}: {detail}"));
    }
    lines.join("; ")
}
