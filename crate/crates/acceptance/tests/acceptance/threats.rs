//! One end-to-end scenario per threat row. Each attack must be refused with
//! the specific typed error of its mitigation.

use hcmr_core::certify::{Decision, ReviewVerdict};
use hcmr_core::digests::{content_digest, DependencyRef, Document};
use hcmr_core::signing::{SigningError, SigningHandle, DEFAULT_AUDIENCE};
use hcmr_testkit::{id, mirror, submission, transform, REVIEWERS, SUBMITTER};

use crate::env::{expect, field, path, Env};

fn failing_checks(r: &hcmr_testkit::http::Response) -> Vec<String> {
    let doc = r.doc();
    let checks = doc.get("report").and_then(|rep| rep.get("checks")).and_then(Document::as_list).unwrap();
    checks
        .iter()
        .filter(|c| c.get("passed").and_then(Document::as_bool) == Some(false))
        .map(|c| c.get("check").and_then(Document::as_str).unwrap().to_string())
        .collect()
}

/// Module certification + provenance: an injected dependency outside the
/// certified catalog is rejected at intake.
fn dependency_injection() -> String {
    let env = Env::new(2);
    let app = id("webapp", "3.1.0");
    let evil = DependencyRef::new("event-stream-helper", "6.6.6".parse().unwrap(), content_digest(b"payload")).unwrap();
    let r = env.publish(&app, &mirror("x"), vec![evil]);
    expect(&r, 422, Some("VettingRejected"));
    assert_eq!(failing_checks(&r), ["dependency-hygiene"]);
    assert_eq!(env.state(&app), "Rejected");

    let vetted = id("flatmap-stream", "0.1.1");
    expect(&env.publish(&vetted, &mirror("y"), vec![]), 201, None);
    let digest =
        env.client.get(&path(&vetted)).doc().get("artifactDigest").and_then(Document::as_str).unwrap().parse().unwrap();
    let uncertified = DependencyRef::new(vetted.name.clone(), vetted.version, digest).unwrap();
    let r = env.publish(&id("webapp", "3.1.1"), &mirror("x"), vec![uncertified]);
    expect(&r, 422, Some("VettingRejected"));
    assert_eq!(failing_checks(&r), ["dependency-hygiene"]);
    "absent and uncertified dependencies rejected: dependency-hygiene".into()
}

/// Verified provenance: non-reproducible output is refused at intake and
/// post-certification tampering is caught at resolution.
fn build_system_subversion() -> String {
    let env = Env::new(2);
    let m = id("liblzma", "5.6.0");
    let mut sub = submission(&env.pki, &m, &mirror("x"), vec![], env.now());
    sub.build_digests[1] = content_digest(b"backdoored build");
    let r = env.client.post("/v1/modules", &sub.to_document());
    expect(&r, 422, Some("VettingRejected"));
    assert_eq!(failing_checks(&r), ["reproducible-build"]);

    let clean = id("liblzma", "5.4.6");
    let dep = env.certify_fully(&clean, &mirror("x"), vec![], 2);
    expect(&env.resolve(&clean), 200, None);
    std::fs::write(env.artifact_file(&dep.digest), b"#!/bin/sh\n# injected build step\n").unwrap();
    let r = env.resolve(&clean);
    expect(&r, 422, Some("DigestMismatch"));
    assert_eq!(field(&r, "module"), "liblzma@5.4.6");
    "reproducible-build rejection; DigestMismatch after tampering".into()
}

/// Multi-party review: a hijacked maintainer account can neither approve
/// its own upload nor certify with a single accomplice.
fn maintainer_hijacking() -> String {
    let env = Env::new(2);
    let m = id("xz-utils", "5.6.1");
    expect(&env.publish(&m, &mirror("x"), vec![]), 201, None);
    expect(&env.review(&m, SUBMITTER, Decision::Approve), 401, Some("SelfReview"));
    expect(&env.review(&m, REVIEWERS[0], Decision::Approve), 200, None);
    expect(&env.review(&m, REVIEWERS[0], Decision::Approve), 200, None);
    expect(&env.validate(&m, &mirror("x")), 409, Some("WrongState"));
    expect(&env.certify(&m), 409, Some("WrongState"));
    assert_eq!(env.state(&m), "InReview");
    "SelfReview; one distinct approver leaves quorum unmet (WrongState)".into()
}

/// Ephemeral signing: a stolen key or token is useless once its window
/// closes.
fn credential_abuse() -> String {
    let env = Env::new(2);
    let m = id("left-pad", "1.3.0");
    expect(&env.publish(&m, &mirror("x"), vec![]), 201, None);
    let stolen_token = env.pki.idp.assert_identity(REVIEWERS[0], DEFAULT_AUDIENCE, env.now(), 300).to_token();
    let stolen = env.pki.signer(REVIEWERS[0], env.now());
    let cert = stolen.certificate();
    assert_eq!(cert.not_after.unix() - cert.not_before.unix(), 600);
    let issued_at = env.now();

    env.clock.advance(601);
    let late = ReviewVerdict::sign(&m, Decision::Approve, "", &stolen, env.now());
    assert_eq!(late.unwrap_err(), SigningError::ExpiredCertificate);
    let backdated = ReviewVerdict::sign(&m, Decision::Approve, "", &stolen, issued_at.plus_secs(10)).unwrap();
    let r = env.client.post(&format!("{}/reviews", path(&m)), &backdated.to_document());
    expect(&r, 401, Some("InvalidSignature"));
    assert_eq!(field(&r, "reason"), "OutsideValidityWindow");

    let req = Document::map([
        ("identityToken", stolen_token.into()),
        ("publicKey", SigningHandle::generate().public_key().to_hex().into()),
    ]);
    expect(&env.client.post("/v1/certificates", &req), 401, Some("ExpiredAssertion"));
    "ExpiredCertificate, OutsideValidityWindow, ExpiredAssertion".into()
}

/// Contract-aware composition: automation cannot plan through or resolve a
/// module that has not been certified.
fn insecure_automation() -> String {
    let env = Env::new(2);
    env.certify_fully(&id("a2b", "1.0.0"), &transform("a", "b"), vec![], 2);
    let b2c = id("b2c", "1.0.0");
    expect(&env.publish(&b2c, &transform("b", "c"), vec![]), 201, None);
    let plan = Document::map([("source", mirror("a").to_document()), ("goal", mirror("c").to_document())]);
    expect(&env.client.post("/v1/plan", &plan), 422, Some("NoPlanFound"));
    let r = env.resolve(&b2c);
    expect(&r, 422, Some("UncertifiedDependency"));
    assert_eq!(field(&r, "module"), "b2c@1.0.0");
    let wrong_goal = Document::map([("source", mirror("a").to_document()), ("goal", mirror("d").to_document())]);
    expect(&env.client.post("/v1/plan", &wrong_goal), 422, Some("NoPlanFound"));
    "NoPlanFound through uncertified stage; UncertifiedDependency".into()
}

pub fn run() -> String {
    let rows: [(&str, fn() -> String); 5] = [
        ("Dependency Injection Attacks", dependency_injection),
        ("Build-System Subversion", build_system_subversion),
        ("Maintainer Account Hijacking", maintainer_hijacking),
        ("Key or Credential Abuse", credential_abuse),
        ("Insecure Automation", insecure_automation),
    ];
    let mut lines = Vec::new();
    for (name, scenario) in rows {
        let detail = std::panic::catch_unwind(scenario).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().unwrap_or_default();
            panic!("{name}: {msg}")
        });
        lines.push(format!("{name}: {detail}"));
    }
    format!("5/5 fail closed; {}", lines.join("; "))
}
