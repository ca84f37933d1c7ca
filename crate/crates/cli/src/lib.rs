//! `hcmr`: command line client for the certified module registry.
//!
//! Exit codes: 0 success, 1 verification or gate failure (report on stdout),
//! 2 usage error, 3 transport error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use clap::Parser;
use hcmr_core::certify::{Decision, RevocationOrder};
use hcmr_core::compose::{composed_artifact, plan_materials, AssemblyPlan, SecurityAttributes};
use hcmr_core::digests::{content_digest, DependencyRef, Digest, Document, ModuleId, Version};
use hcmr_core::provenance::{generate_statement, wrap_envelope};
use hcmr_core::registry::ModuleSubmission;
use hcmr_core::signing::{IdentityProvider, ServiceKey, DEFAULT_AUDIENCE};
use hcmr_core::time::Timestamp;

pub mod args;
pub mod client;
pub mod render;
pub mod settings;
pub mod signing;
pub mod verify;

use args::{Cli, Command, DevAction, LogAction, ModuleArg, ReviewAction, ReviewArgs, SubmitArgs};
use client::Api;
use settings::Settings;
use signing::{enroll, sign_verdict, signing_time, SignerContext, SignerHandle};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

/// Default issuer of development identity tokens.
pub const DEV_ISSUER: &str = "https://idp.local";

#[derive(Debug, Clone)]
pub enum Failure {
    /// Gate or verification failure; the document goes to stdout.
    Report(Document),
    Usage(String),
    Transport(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Report(doc) => {
                let error = doc.get("error").and_then(Document::as_str).unwrap_or("Failure");
                match doc.get("message").and_then(Document::as_str) {
                    Some(m) => write!(f, "{error}: {m}"),
                    None => write!(f, "{error}"),
                }
            }
            Failure::Usage(m) | Failure::Transport(m) => f.write_str(m),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Report(_) => EXIT_FAILURE,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Transport(_) => EXIT_TRANSPORT,
        }
    }
}

/// Runs one invocation. `env` stands in for the process environment.
pub fn run(argv: &[String], env: &BTreeMap<String, String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    let settings = match Settings::resolve(&cli, env) {
        Ok(s) => s,
        Err(f) => {
            let _ = writeln!(err, "hcmr: {f}");
            return f.exit_code();
        }
    };
    match dispatch(&cli.command, &settings, err) {
        Ok(doc) => {
            let _ = render::write(out, &doc, settings.output);
            EXIT_OK
        }
        Err(f) => {
            if let Failure::Report(doc) = &f {
                let _ = render::write(out, doc, settings.output);
            }
            let _ = writeln!(err, "hcmr: {f}");
            f.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main_from_env() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let env: BTreeMap<String, String> = std::env::vars().collect();
    run(&argv, &env, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn module_id(m: &ModuleArg) -> Result<ModuleId, Failure> {
    let version: Version = m.version.parse().map_err(|e| Failure::Usage(format!("version `{}`: {e}", m.version)))?;
    Ok(ModuleId::new(&m.name, version))
}

fn module_path(id: &ModuleId) -> String {
    format!("/v1/modules/{}/{}", id.name, id.version)
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_doc(path: &Path) -> Result<Document, Failure> {
    Document::from_json_slice(&read_file(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn dispatch(cmd: &Command, s: &Settings, err: &mut dyn Write) -> Result<Document, Failure> {
    let api = Api::new(&s.registry);
    match cmd {
        Command::Submit(a) => submit(&api, s, a),
        Command::Review(a) => review(&api, s, a, err),
        Command::Validate { module, manifest } => {
            let id = module_id(module)?;
            api.post(&format!("{}/validate", module_path(&id)), &read_doc(manifest)?)
        }
        Command::Certify { module } => {
            let id = module_id(module)?;
            api.post(&format!("{}/certify", module_path(&id)), &Document::empty_map())
        }
        Command::Revoke { module, reason } => {
            let id = module_id(module)?;
            let signer = enroll(&api, s.token()?, s.ca_root()?.as_ref())?;
            let order = RevocationOrder::sign(&id, reason, &signer, signing_time(&signer)).map_err(|e| {
                Failure::Report(Document::map([("error", e.variant().into()), ("message", e.to_string().into())]))
            })?;
            api.post(&format!("{}/revoke", module_path(&id)), &order.to_document())
        }
        Command::Verify { module } => {
            let id = module_id(module)?;
            let ctx = verify::VerifyContext {
                api: &api,
                ca_root: s.require_ca_root()?,
                log_key: s.require_log_key()?,
                quorum: s.quorum,
                authorities: &s.revocation_authorities,
            };
            verify::verify_module(&ctx, &id)
        }
        Command::Resolve { module } => {
            let id = module_id(module)?;
            let body = Document::map([("name", id.name.as_str().into()), ("version", id.version.to_string().into())]);
            api.post("/v1/resolve", &body)
        }
        Command::Plan { source, goal, constraints, max_depth } => {
            let mut m = BTreeMap::new();
            m.insert("source".to_string(), read_doc(source)?);
            m.insert("goal".to_string(), read_doc(goal)?);
            if let Some(c) = constraints {
                m.insert("constraints".to_string(), read_doc(c)?);
            }
            if let Some(d) = max_depth {
                m.insert("maxDepth".to_string(), Document::Int(i64::from(*d)));
            }
            api.post("/v1/plan", &Document::Map(m))
        }
        Command::Compose { plan, build_record, artifact_out } => {
            compose(&api, s, plan, build_record, artifact_out.as_deref())
        }
        Command::Audit { old, new, old_root } => {
            let old_root = old_root
                .as_deref()
                .map(Digest::parse)
                .transpose()
                .map_err(|e| Failure::Usage(format!("--old-root: {e}")))?;
            verify::audit(&api, &s.require_log_key()?, *old, *new, old_root)
        }
        Command::Log { action } => match action {
            LogAction::Head => {
                let head = match &s.log_key_path {
                    Some(_) => verify::fetch_head(&api, &s.require_log_key()?)?.to_document(),
                    None => {
                        let _ = writeln!(err, "hcmr: no log key configured; tree head signature not checked");
                        api.get("/v1/log/head")?
                    }
                };
                Ok(head)
            }
            LogAction::Entry { index } => api.get(&format!("/v1/log/entries/{index}")),
            LogAction::Proof { index, size } => verify::inclusion(&api, &s.require_log_key()?, *index, *size),
        },
        Command::Dev { action } => match action {
            DevAction::Token { subject, ttl, idp_key, issuer } => {
                let path = idp_key.clone().unwrap_or_else(|| s.idp_key_path.clone());
                let key = ServiceKey::read_file(&path).map_err(|e| Failure::Usage(e.to_string()))?;
                let issuer = issuer.clone().or_else(|| s.identity_issuer.clone()).unwrap_or_else(|| DEV_ISSUER.into());
                let token = IdentityProvider::new(issuer, key)
                    .assert_identity(subject, DEFAULT_AUDIENCE, Timestamp::now(), *ttl)
                    .to_token();
                Ok(Document::map([("identityToken", token.into())]))
            }
        },
    }
}

fn parse_dependency(api: &Api, spec: &str) -> Result<DependencyRef, Failure> {
    let usage = |m: String| Failure::Usage(format!("--dependency `{spec}`: {m}"));
    let (module, pinned) = match spec.split_once('=') {
        Some((m, d)) => (m, Some(Digest::parse(d).map_err(|e| usage(e.to_string()))?)),
        None => (spec, None),
    };
    let id = ModuleId::parse(module).map_err(|e| usage(e.to_string()))?;
    let digest = match pinned {
        Some(d) => d,
        None => {
            let rec = api.get(&module_path(&id))?;
            let text = rec.get("artifactDigest").and_then(Document::as_str).unwrap_or_default();
            Digest::parse(text).map_err(|e| Failure::Transport(format!("record of {id}: {e}")))?
        }
    };
    DependencyRef::new(id.name, id.version, digest).map_err(|e| usage(e.to_string()))
}

fn submit(api: &Api, s: &Settings, a: &SubmitArgs) -> Result<Document, Failure> {
    let id = module_id(&a.module)?;
    let artifact = read_file(&a.artifact)?;
    let digest = content_digest(&artifact);
    let build_digests = match (&a.rebuild, a.build_digests.as_slice()) {
        (Some(_), [_, ..]) => return Err(Failure::Usage("give --rebuild or --build-digest, not both".into())),
        (Some(path), []) => vec![digest, content_digest(&read_file(path)?)],
        (None, [x, y]) => [x, y]
            .iter()
            .map(|d| Digest::parse(d).map_err(|e| Failure::Usage(format!("--build-digest: {e}"))))
            .collect::<Result<_, _>>()?,
        (None, _) => return Err(Failure::Usage("need --rebuild or exactly two --build-digest values".into())),
    };
    let dependencies = a.dependencies.iter().map(|d| parse_dependency(api, d)).collect::<Result<Vec<_>, _>>()?;
    let contract = read_doc(&a.contract)?;
    let build_record = read_doc(&a.build_record)?;

    let signer = enroll(api, s.token()?, s.ca_root()?.as_ref())?;
    let now = signing_time(&signer);
    let gen = |e: hcmr_core::provenance::ProvenanceError| Failure::Usage(format!("provenance: {e}"));
    let statement = generate_statement(&build_record, digest, &dependencies, now).map_err(gen)?;
    let provenance = wrap_envelope(&statement, &signer, now).map_err(gen)?;
    let submission = ModuleSubmission {
        module: id,
        artifact,
        contract,
        provenance,
        dependencies,
        build_digests,
        security_attributes: SecurityAttributes {
            required_permissions: a.permissions.iter().cloned().collect::<BTreeSet<_>>(),
            threat_assumptions: a.threat_assumptions.clone(),
        },
    };
    submission.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    api.post("/v1/modules", &submission.to_document())
}

fn review(api: &Api, s: &Settings, a: &ReviewArgs, err: &mut dyn Write) -> Result<Document, Failure> {
    let token = s.token()?;
    let ca_root = s.ca_root()?;
    match (&a.action, a.serve_signer) {
        (None, true) => {
            let ctx = SignerContext { api: api.clone(), token: token.to_string(), ca_root };
            let handle =
                SignerHandle::start(ctx, &a.listen).map_err(|e| Failure::Usage(format!("{}: {e}", a.listen)))?;
            let _ = writeln!(err, "hcmr: signing helper listening on http://{}", handle.addr());
            handle.wait_for_interrupt();
            Ok(Document::map([("stopped", true.into())]))
        }
        (Some(action), false) => {
            let (module, decision, rationale) = match action {
                ReviewAction::Approve { module, rationale } => (module, Decision::Approve, rationale),
                ReviewAction::Reject { module, rationale } => (module, Decision::Reject, rationale),
            };
            let id = module_id(module)?;
            let verdict = sign_verdict(api, token, ca_root.as_ref(), &id, decision, rationale)?;
            api.post(&format!("{}/reviews", module_path(&id)), &verdict.to_document())
        }
        _ => Err(Failure::Usage("review needs `approve`, `reject` or --serve-signer".into())),
    }
}

fn compose(
    api: &Api,
    s: &Settings,
    plan: &Path,
    build_record: &Path,
    artifact_out: Option<&Path>,
) -> Result<Document, Failure> {
    let plan = AssemblyPlan::from_document(&read_doc(plan)?).map_err(|e| Failure::Usage(e.to_string()))?;
    let artifact = composed_artifact(&plan);
    if let Some(path) = artifact_out {
        std::fs::write(path, &artifact).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let signer = enroll(api, s.token()?, s.ca_root()?.as_ref())?;
    let now = signing_time(&signer);
    let gen = |e: hcmr_core::provenance::ProvenanceError| Failure::Usage(format!("provenance: {e}"));
    let statement =
        generate_statement(&read_doc(build_record)?, content_digest(&artifact), &plan_materials(&plan), now)
            .map_err(gen)?;
    let envelope = wrap_envelope(&statement, &signer, now).map_err(gen)?;
    api.post("/v1/compose", &Document::map([("plan", plan.to_document()), ("envelope", envelope.to_document())]))
}
