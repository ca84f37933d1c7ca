//! Ephemeral signing sessions and the local signing helper for browsers.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use hcmr_core::certify::{Decision, ReviewVerdict};
use hcmr_core::digests::{canonicalize, from_document, Document, ModuleId};
use hcmr_core::signing::{EphemeralSigner, IdentityAssertion, IdentityCertificate, PublicKey, SigningHandle};
use hcmr_core::time::Timestamp;
use tokio::sync::oneshot;
use tower_http::cors::{Any, CorsLayer};

use crate::client::Api;
use crate::Failure;

/// Generates a fresh key, has the registry certify it for the token's
/// subject, and checks the certificate locally before use.
pub fn enroll(api: &Api, token: &str, ca_root: Option<&PublicKey>) -> Result<EphemeralSigner, Failure> {
    let assertion = IdentityAssertion::from_token(token).map_err(|e| Failure::Usage(format!("identity token: {e}")))?;
    let handle = SigningHandle::generate();
    let req = Document::map([("identityToken", token.into()), ("publicKey", handle.public_key().to_hex().into())]);
    let cert: IdentityCertificate = from_document(&api.post("/v1/certificates", &req)?)
        .map_err(|e| Failure::Transport(format!("certificate response: {e}")))?;
    let reject = |msg: String| {
        Failure::Report(Document::map([("error", "CertificateRejected".into()), ("message", msg.into())]))
    };
    if cert.subject != assertion.subject {
        return Err(reject(format!("certificate names {} instead of {}", cert.subject, assertion.subject)));
    }
    if let Some(root) = ca_root {
        cert.verify_chain(root).map_err(|e| reject(e.to_string()))?;
    }
    EphemeralSigner::from_parts(handle, cert).map_err(|e| reject(e.to_string()))
}

/// Signing time inside the certificate window despite small clock skew.
pub fn signing_time(signer: &EphemeralSigner) -> Timestamp {
    Timestamp::now().max(signer.certificate().not_before)
}

pub fn sign_verdict(
    api: &Api,
    token: &str,
    ca_root: Option<&PublicKey>,
    module: &ModuleId,
    decision: Decision,
    rationale: &str,
) -> Result<ReviewVerdict, Failure> {
    let signer = enroll(api, token, ca_root)?;
    ReviewVerdict::sign(module, decision, rationale, &signer, signing_time(&signer))
        .map_err(|e| Failure::Report(Document::map([("error", e.variant().into()), ("message", e.to_string().into())])))
}

/// State of the signing helper: the registry used for enrollment and the
/// reviewer's identity token. No key outlives a request.
pub struct SignerContext {
    pub api: Api,
    pub token: String,
    pub ca_root: Option<PublicKey>,
}

/// `GET /v1/identity` names the signing subject; `POST /v1/sign/review`
/// takes `{module: {name, version}, decision, rationale}` and returns a
/// signed verdict for the caller to post to the registry.
pub fn signer_router(ctx: Arc<SignerContext>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/identity", get(identity))
        .route("/v1/sign/review", post(sign_review))
        .layer(cors)
        .with_state(ctx)
}

fn reply(status: StatusCode, doc: &Document) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], canonicalize(doc)).into_response()
}

fn error(status: StatusCode, variant: &str, message: impl Into<String>) -> Response {
    reply(status, &Document::map([("error", variant.into()), ("message", message.into().into())]))
}

async fn identity(State(ctx): State<Arc<SignerContext>>) -> Response {
    match IdentityAssertion::from_token(&ctx.token) {
        Ok(a) => reply(
            StatusCode::OK,
            &Document::map([("subject", a.subject.into()), ("expiresAt", a.expires_at.to_string().into())]),
        ),
        Err(e) => error(StatusCode::UNAUTHORIZED, e.variant(), e.to_string()),
    }
}

async fn sign_review(State(ctx): State<Arc<SignerContext>>, body: Bytes) -> Response {
    let doc = match Document::from_json_slice(&body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedRequest", e.to_string()),
    };
    let parsed = (|| -> Result<(ModuleId, Decision, String), String> {
        let map = doc.as_map().ok_or("body must be a map")?;
        if let Some(k) = map.keys().find(|k| !["module", "decision", "rationale"].contains(&k.as_str())) {
            return Err(format!("unknown key `{k}`"));
        }
        let module: ModuleId =
            from_document(doc.get("module").ok_or("missing `module`")?).map_err(|e| e.to_string())?;
        let decision: Decision =
            from_document(doc.get("decision").ok_or("missing `decision`")?).map_err(|e| e.to_string())?;
        let rationale = doc.get("rationale").and_then(Document::as_str).unwrap_or_default().to_string();
        Ok((module, decision, rationale))
    })();
    let (module, decision, rationale) = match parsed {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedRequest", e),
    };
    let result = tokio::task::spawn_blocking(move || {
        sign_verdict(&ctx.api, &ctx.token, ctx.ca_root.as_ref(), &module, decision, &rationale)
    })
    .await;
    match result {
        Ok(Ok(verdict)) => reply(StatusCode::OK, &verdict.to_document()),
        Ok(Err(Failure::Report(doc))) => reply(StatusCode::UNAUTHORIZED, &doc),
        Ok(Err(other)) => error(StatusCode::BAD_GATEWAY, "SigningFailed", other.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", e.to_string()),
    }
}

/// The signing helper on its own runtime thread, stopped on drop.
pub struct SignerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl SignerHandle {
    pub fn start(ctx: SignerContext, addr: &str) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = signer_router(Arc::new(ctx));
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(SignerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the process receives ctrl-c.
    pub fn wait_for_interrupt(self) {
        if let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() {
            rt.block_on(async {
                let _ = tokio::signal::ctrl_c().await;
            });
        }
    }
}

impl Drop for SignerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
