//! Endpoint table and error-to-status mapping.

use std::collections::{BTreeMap, HashMap};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use hcmr_core::certify::{AssuranceLevel, CertState, CertifyError, ReviewVerdict, RevocationOrder, ValidationManifest};
use hcmr_core::compose::{AssemblyPlan, ComposeError, ResolutionConstraint};
use hcmr_core::contracts::parse_contract;
use hcmr_core::digests::{canonicalize, to_document, Digest, Document, ModuleId, Version};
use hcmr_core::provenance::Envelope;
use hcmr_core::registry::{ModuleSubmission, RegistryError};
use hcmr_core::signing::{IdentityAssertion, PublicKey};
use hcmr_core::translog::LogError;
use tower_http::cors::{Any, CorsLayer};

use crate::AppState;

pub const DEFAULT_MAX_DEPTH: usize = 4;
/// Upper bound on request bodies; artifacts travel inline as base64.
pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/modules", post(publish))
        .route("/v1/modules/{name}/{version}", get(get_module))
        .route("/v1/modules/{name}/{version}/reviews", post(review))
        .route("/v1/modules/{name}/{version}/validate", post(validate))
        .route("/v1/modules/{name}/{version}/certify", post(certify))
        .route("/v1/modules/{name}/{version}/revoke", post(revoke))
        .route("/v1/catalog", get(catalog))
        .route("/v1/resolve", post(resolve))
        .route("/v1/plan", post(plan))
        .route("/v1/compose", post(compose))
        .route("/v1/log/head", get(log_head))
        .route("/v1/log/entries/{index}", get(log_entry))
        .route("/v1/log/proof", get(log_proof))
        .route("/v1/log/consistency", get(log_consistency))
        .route("/v1/reviews/pending", get(pending_reviews))
        .route("/v1/artifacts/{digest}", get(artifact))
        .route("/v1/certificates", post(issue_certificate))
        .layer(axum::extract::DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(state)
}

/// A canonical document with a status.
pub struct Reply(pub StatusCode, pub Document);

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (self.0, [(header::CONTENT_TYPE, "application/json")], canonicalize(&self.1)).into_response()
    }
}

fn ok(doc: Document) -> Result<Reply, ApiError> {
    Ok(Reply(StatusCode::OK, doc))
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub variant: String,
    pub message: String,
    pub module: Option<ModuleId>,
    pub details: BTreeMap<String, Document>,
}

impl ApiError {
    pub fn new(status: StatusCode, variant: &str, message: impl Into<String>) -> Self {
        ApiError { status, variant: variant.into(), message: message.into(), module: None, details: BTreeMap::new() }
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MalformedRequest", message)
    }

    fn with(mut self, key: &str, doc: Document) -> Self {
        self.details.insert(key.into(), doc);
        self
    }

    fn about(mut self, module: &ModuleId) -> Self {
        self.module = Some(module.clone());
        self
    }

    pub fn to_document(&self) -> Document {
        let mut m = self.details.clone();
        m.insert("error".into(), self.variant.as_str().into());
        m.insert("message".into(), self.message.as_str().into());
        if let Some(id) = &self.module {
            m.insert("module".into(), id.to_string().into());
        }
        Document::Map(m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        Reply(self.status, self.to_document()).into_response()
    }
}

pub fn status_for(e: &RegistryError) -> StatusCode {
    match e {
        RegistryError::MalformedRequest(_) | RegistryError::MalformedSubmission(_) => StatusCode::BAD_REQUEST,
        RegistryError::UnknownModule(_) => StatusCode::NOT_FOUND,
        RegistryError::AlreadyExists(_) => StatusCode::CONFLICT,
        RegistryError::Certify(c) => match c {
            CertifyError::SelfReview
            | CertifyError::InvalidSignature(_)
            | CertifyError::IdentityMismatch { .. }
            | CertifyError::UnauthorizedRevocation(_) => StatusCode::UNAUTHORIZED,
            CertifyError::WrongState { .. } => StatusCode::CONFLICT,
            CertifyError::DependencyUncertified(_) | CertifyError::UncertifiedInClosure(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            CertifyError::ModuleMismatch { .. }
            | CertifyError::MalformedManifest(_)
            | CertifyError::MalformedPolicy(_) => StatusCode::BAD_REQUEST,
            CertifyError::SandboxUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        },
        RegistryError::Compose(c) => match c {
            ComposeError::UnknownModule(_) => StatusCode::NOT_FOUND,
            ComposeError::InvalidDepth | ComposeError::MalformedConstraint(_) | ComposeError::MalformedPlan(_) => {
                StatusCode::BAD_REQUEST
            }
            ComposeError::StaleArtifact { .. } => StatusCode::CONFLICT,
            ComposeError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        },
        RegistryError::Log(LogError::OutOfRange(_)) => StatusCode::NOT_FOUND,
        RegistryError::Log(_) | RegistryError::Storage(_) | RegistryError::CorruptStore(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let module = match &e {
            RegistryError::UnknownModule(m) | RegistryError::AlreadyExists(m) => Some(m.clone()),
            RegistryError::Compose(c) => c.module().cloned(),
            RegistryError::Certify(
                CertifyError::WrongState { module, .. }
                | CertifyError::DependencyUncertified(module)
                | CertifyError::UncertifiedInClosure(module),
            ) => Some(module.clone()),
            _ => None,
        };
        let mut err = ApiError::new(status_for(&e), e.variant(), e.to_string());
        err.module = module;
        if let RegistryError::Certify(CertifyError::WrongState { state, .. }) = &e {
            err = err.with("state", state.name().into());
        }
        if let RegistryError::Certify(CertifyError::InvalidSignature(s)) = &e {
            err = err.with("reason", s.variant().into());
        }
        if let RegistryError::Compose(ComposeError::DepthExceeded { shortest, max_depth }) = &e {
            err = err
                .with("shortest", Document::Int(*shortest as i64))
                .with("maxDepth", Document::Int(*max_depth as i64));
        }
        err
    }
}

impl From<ComposeError> for ApiError {
    fn from(e: ComposeError) -> Self {
        RegistryError::Compose(e).into()
    }
}

impl From<CertifyError> for ApiError {
    fn from(e: CertifyError) -> Self {
        RegistryError::Certify(e).into()
    }
}

/// Runs registry work off the async workers; the sandbox and fsync block.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", e.to_string()))?
}

fn parse_body(body: &Bytes) -> Result<Document, ApiError> {
    Document::from_json_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

fn module_id(name: &str, version: &str) -> Result<ModuleId, ApiError> {
    let version: Version =
        version.parse().map_err(|e: hcmr_core::digests::DigestError| ApiError::malformed(e.to_string()))?;
    Ok(ModuleId::new(name, version))
}

fn field<'a>(doc: &'a Document, key: &str) -> Result<&'a Document, ApiError> {
    doc.get(key).ok_or_else(|| ApiError::malformed(format!("missing `{key}`")))
}

fn only_keys(doc: &Document, allowed: &[&str]) -> Result<(), ApiError> {
    let map = doc.as_map().ok_or_else(|| ApiError::malformed("body must be a map"))?;
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::malformed(format!("unknown key `{k}`"))),
        None => Ok(()),
    }
}

async fn publish(State(st): State<AppState>, body: Bytes) -> Result<Reply, ApiError> {
    let doc = parse_body(&body)?;
    let submission = ModuleSubmission::from_document(&doc)?;
    let record = blocking(move || Ok(st.registry.submit(submission)?)).await?;
    if record.state() == CertState::Rejected {
        let report = record.certification.vetting_report.clone();
        let failing: Vec<&str> =
            report.as_ref().map(|r| r.failing().iter().map(|c| c.name()).collect()).unwrap_or_default();
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "VettingRejected",
            format!("intake vetting failed: {}", failing.join(", ")),
        )
        .about(&record.module)
        .with("report", to_document(&report).expect("report is representable"))
        .with("record", record.to_document()));
    }
    Ok(Reply(StatusCode::CREATED, record.to_document()))
}

async fn get_module(
    State(st): State<AppState>,
    Path((name, version)): Path<(String, String)>,
) -> Result<Reply, ApiError> {
    let id = module_id(&name, &version)?;
    ok(st.registry.module(&id)?.to_document())
}

async fn review(
    State(st): State<AppState>,
    Path((name, version)): Path<(String, String)>,
    body: Bytes,
) -> Result<Reply, ApiError> {
    let id = module_id(&name, &version)?;
    let verdict = ReviewVerdict::from_document(&parse_body(&body)?).map_err(ApiError::malformed)?;
    let record = blocking(move || Ok(st.registry.review(&id, verdict)?)).await?;
    ok(record.to_document())
}

async fn validate(
    State(st): State<AppState>,
    Path((name, version)): Path<(String, String)>,
    body: Bytes,
) -> Result<Reply, ApiError> {
    let id = module_id(&name, &version)?;
    let manifest = ValidationManifest::from_document(&parse_body(&body)?)?;
    let (record, transcript) = blocking(move || Ok(st.registry.validate(&id, &manifest)?)).await?;
    let doc = Document::map([("record", record.to_document()), ("transcript", transcript.to_document())]);
    if record.state() == CertState::Rejected {
        let mut err =
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", "validation transcript did not pass")
                .about(&record.module);
        err.details = doc.as_map().cloned().unwrap_or_default();
        return Err(err);
    }
    ok(doc)
}

async fn certify(State(st): State<AppState>, Path((name, version)): Path<(String, String)>) -> Result<Reply, ApiError> {
    let id = module_id(&name, &version)?;
    let record = blocking(move || Ok(st.registry.certify(&id)?)).await?;
    ok(record.to_document())
}

async fn revoke(
    State(st): State<AppState>,
    Path((name, version)): Path<(String, String)>,
    body: Bytes,
) -> Result<Reply, ApiError> {
    let id = module_id(&name, &version)?;
    let order = RevocationOrder::from_document(&parse_body(&body)?).map_err(ApiError::malformed)?;
    let record = blocking(move || Ok(st.registry.revoke(&id, order)?)).await?;
    ok(record.to_document())
}

async fn catalog(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Reply, ApiError> {
    let mut constraint = ResolutionConstraint::default();
    for key in q.keys() {
        if !["minAssurance", "name", "permissions"].contains(&key.as_str()) {
            return Err(ApiError::malformed(format!("unknown query parameter `{key}`")));
        }
    }
    if let Some(level) = q.get("minAssurance").filter(|s| !s.is_empty()) {
        constraint.min_assurance = level.parse::<AssuranceLevel>().map_err(ApiError::malformed)?;
    }
    if let Some(name) = q.get("name").filter(|s| !s.is_empty()) {
        constraint = constraint.with_pattern(name)?;
    }
    if let Some(perms) = q.get("permissions") {
        constraint.permission_ceiling = Some(perms.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect());
    }
    let modules = st.registry.discover(&constraint).iter().map(|r| r.to_document()).collect();
    ok(Document::map([("modules", Document::List(modules))]))
}

fn module_ref(doc: &Document) -> Result<ModuleId, ApiError> {
    only_keys(doc, &["name", "version"])?;
    let text = |k: &str| field(doc, k)?.as_str().ok_or_else(|| ApiError::malformed(format!("`{k}` must be a string")));
    module_id(text("name")?, text("version")?)
}

async fn resolve(State(st): State<AppState>, body: Bytes) -> Result<Reply, ApiError> {
    let id = module_ref(&parse_body(&body)?)?;
    let graph = blocking(move || Ok(st.registry.resolve(&id)?)).await?;
    ok(graph.to_document())
}

async fn plan(State(st): State<AppState>, body: Bytes) -> Result<Reply, ApiError> {
    let doc = parse_body(&body)?;
    only_keys(&doc, &["source", "goal", "constraints", "maxDepth"])?;
    let contract = |key: &str| {
        parse_contract(field(&doc, key)?)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.variant(), format!("{key}: {e}")))
    };
    let (source, goal) = (contract("source")?, contract("goal")?);
    let constraints = match doc.get("constraints").filter(|d| !d.is_null()) {
        Some(c) => ResolutionConstraint::from_document(c)?,
        None => ResolutionConstraint::default(),
    };
    let max_depth = match doc.get("maxDepth").filter(|d| !d.is_null()) {
        Some(d) => d
            .as_int()
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| ApiError::malformed("maxDepth must be a non-negative integer"))?,
        None => DEFAULT_MAX_DEPTH,
    };
    let plan = blocking(move || Ok(st.registry.plan(&source, &goal, &constraints, max_depth)?)).await?;
    ok(plan.to_document())
}

async fn compose(State(st): State<AppState>, body: Bytes) -> Result<Reply, ApiError> {
    let doc = parse_body(&body)?;
    only_keys(&doc, &["plan", "envelope"])?;
    let plan = AssemblyPlan::from_document(field(&doc, "plan")?)?;
    let envelope = Envelope::from_document(field(&doc, "envelope")?)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedEnvelope", e.to_string()))?;
    let record = blocking(move || Ok(st.registry.record_composition(&plan, &envelope)?)).await?;
    Ok(Reply(StatusCode::CREATED, to_document(&record).expect("composition is representable")))
}

async fn log_head(State(st): State<AppState>) -> Result<Reply, ApiError> {
    ok(st.registry.log().head().to_document())
}

async fn log_entry(State(st): State<AppState>, Path(index): Path<String>) -> Result<Reply, ApiError> {
    let index: u64 = index.parse().map_err(|_| ApiError::malformed("index must be a non-negative integer"))?;
    let entry = st
        .registry
        .log()
        .entry(index)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "OutOfRange", format!("no entry at index {index}")))?;
    ok(entry.to_document())
}

fn query_u64(q: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<u64>().map_err(|_| ApiError::malformed(format!("`{key}` must be a non-negative integer"))))
        .transpose()
}

fn log_error(e: LogError) -> ApiError {
    match e {
        LogError::OutOfRange(s) => ApiError::new(StatusCode::BAD_REQUEST, "OutOfRange", s),
        other => RegistryError::Log(other).into(),
    }
}

async fn log_proof(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Reply, ApiError> {
    let index = query_u64(&q, "index")?.ok_or_else(|| ApiError::malformed("missing `index`"))?;
    let size = query_u64(&q, "size")?.unwrap_or_else(|| st.registry.log().size());
    let proof = st.registry.log().inclusion_proof(index, size).map_err(log_error)?;
    ok(proof.to_document())
}

async fn log_consistency(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Reply, ApiError> {
    let old = query_u64(&q, "old")?.ok_or_else(|| ApiError::malformed("missing `old`"))?;
    let new = query_u64(&q, "new")?.unwrap_or_else(|| st.registry.log().size());
    let proof = st.registry.log().consistency_proof(old, new).map_err(log_error)?;
    ok(proof.to_document())
}

async fn pending_reviews(State(st): State<AppState>) -> Result<Reply, ApiError> {
    let items = to_document(&st.registry.pending_reviews()).expect("queue is representable");
    ok(Document::map([("items", items)]))
}

/// Raw stored bytes. Clients re-hash before trusting them.
async fn artifact(State(st): State<AppState>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let digest = Digest::parse(&digest).map_err(|e| ApiError::malformed(e.to_string()))?;
    let bytes = st
        .registry
        .artifact(&digest)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownArtifact", format!("no artifact {digest}")))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

/// Exchanges an identity token for a short-lived certificate on `publicKey`.
async fn issue_certificate(State(st): State<AppState>, body: Bytes) -> Result<Reply, ApiError> {
    let ca = st.ca.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "CertificateAuthorityDisabled",
            "this registry does not issue certificates",
        )
    })?;
    let doc = parse_body(&body)?;
    only_keys(&doc, &["identityToken", "publicKey"])?;
    let text = |k: &str| field(&doc, k)?.as_str().ok_or_else(|| ApiError::malformed(format!("`{k}` must be a string")));
    let unauthorized =
        |e: hcmr_core::signing::SigningError| ApiError::new(StatusCode::UNAUTHORIZED, e.variant(), e.to_string());
    let assertion = IdentityAssertion::from_token(text("identityToken")?).map_err(unauthorized)?;
    let key = PublicKey::from_hex(text("publicKey")?).map_err(|e| ApiError::malformed(e.to_string()))?;
    let cert = ca.issue_certificate(&assertion, key, st.clock.now()).map_err(unauthorized)?;
    ok(cert.to_document())
}
