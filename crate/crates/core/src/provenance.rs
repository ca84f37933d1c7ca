//! SLSA-style provenance statements and DSSE envelopes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digests::{canonicalize, from_document, to_document, DependencyRef, Digest, Document, ModuleId};
use crate::encoding::{b64_decode, b64_encode};
use crate::signing::{EphemeralSigner, IdentityCertificate, PublicKey};
use crate::time::Timestamp;

pub const STATEMENT_TYPE: &str = "https://in-toto.io/Statement/v0.1";
pub const PREDICATE_TYPE: &str = "https://slsa.dev/provenance/v0.2";
pub const PAYLOAD_TYPE: &str = "application/vnd.in-toto+json";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProvenanceError {
    #[error("build record lacks required field `{0}`")]
    MissingBuildField(String),
    #[error("signature does not verify")]
    SignatureMismatch,
    #[error("signing certificate does not chain to a trusted root")]
    UntrustedIssuer,
    #[error("signing certificate not valid at integration time")]
    ExpiredCertificate,
    #[error("payload is not in canonical form")]
    NonCanonicalPayload,
    #[error("unsupported payload type `{0}`")]
    UnsupportedPayloadType(String),
    #[error("unknown statement or predicate type `{0}`")]
    UnknownPredicateType(String),
    #[error("malformed statement: {0}")]
    MalformedStatement(String),
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subject {
    pub name: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Material {
    pub uri: String,
    pub digest: Digest,
}

/// Material URI used for a registry dependency.
pub fn material_uri(id: &ModuleId) -> String {
    format!("hcmr://{id}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceStatement {
    pub subject: Vec<Subject>,
    pub builder_id: String,
    pub build_type: String,
    pub invocation: Document,
    pub materials: Vec<Material>,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
}

impl ProvenanceStatement {
    pub fn to_document(&self) -> Document {
        let subject = self
            .subject
            .iter()
            .map(|s| Document::map([("digest", s.digest.into()), ("name", s.name.as_str().into())]))
            .collect::<Vec<_>>();
        let materials = self
            .materials
            .iter()
            .map(|m| Document::map([("digest", m.digest.into()), ("uri", m.uri.as_str().into())]))
            .collect::<Vec<_>>();
        Document::map([
            ("_type", STATEMENT_TYPE.into()),
            ("predicateType", PREDICATE_TYPE.into()),
            ("subject", Document::List(subject)),
            (
                "predicate",
                Document::map([
                    ("builder", Document::map([("id", self.builder_id.as_str().into())])),
                    ("buildType", self.build_type.as_str().into()),
                    ("invocation", self.invocation.clone()),
                    ("materials", Document::List(materials)),
                    (
                        "metadata",
                        Document::map([
                            ("buildFinishedOn", self.finished_at.to_string().into()),
                            ("buildStartedOn", self.started_at.to_string().into()),
                        ]),
                    ),
                ]),
            ),
        ])
    }

    /// Parses a statement document. Empty or absent builder, build type,
    /// invocation and subject are accepted here and reported by
    /// [`check_completeness`].
    pub fn from_document(doc: &Document) -> Result<Self, ProvenanceError> {
        let malformed = |m: &str| ProvenanceError::MalformedStatement(m.to_string());
        let statement_type = doc.get("_type").and_then(Document::as_str).unwrap_or_default();
        if statement_type != STATEMENT_TYPE {
            return Err(ProvenanceError::UnknownPredicateType(statement_type.to_string()));
        }
        let predicate_type = doc.get("predicateType").and_then(Document::as_str).unwrap_or_default();
        if predicate_type != PREDICATE_TYPE {
            return Err(ProvenanceError::UnknownPredicateType(predicate_type.to_string()));
        }
        let predicate = doc.get("predicate").ok_or_else(|| malformed("missing predicate"))?;

        let digest_field = |item: &Document| -> Result<Digest, ProvenanceError> {
            let text = item.get("digest").and_then(Document::as_str).ok_or_else(|| malformed("missing digest"))?;
            Digest::parse(text).map_err(|e| ProvenanceError::MalformedStatement(e.to_string()))
        };

        let mut subject = Vec::new();
        for item in doc.get("subject").and_then(Document::as_list).unwrap_or_default() {
            let name = item.get("name").and_then(Document::as_str).ok_or_else(|| malformed("subject name"))?;
            subject.push(Subject { name: name.to_string(), digest: digest_field(item)? });
        }
        let mut materials = Vec::new();
        for item in predicate.get("materials").and_then(Document::as_list).unwrap_or_default() {
            let uri = item.get("uri").and_then(Document::as_str).ok_or_else(|| malformed("material uri"))?;
            materials.push(Material { uri: uri.to_string(), digest: digest_field(item)? });
        }
        let time_field = |key: &str| -> Result<Timestamp, ProvenanceError> {
            predicate
                .get("metadata")
                .and_then(|m| m.get(key))
                .and_then(Document::as_str)
                .ok_or_else(|| malformed(key))?
                .parse()
                .map_err(|e: String| ProvenanceError::MalformedStatement(e))
        };
        let statement = ProvenanceStatement {
            subject,
            builder_id: predicate
                .get("builder")
                .and_then(|b| b.get("id"))
                .and_then(Document::as_str)
                .unwrap_or_default()
                .to_string(),
            build_type: predicate.get("buildType").and_then(Document::as_str).unwrap_or_default().to_string(),
            invocation: predicate.get("invocation").cloned().unwrap_or_default(),
            materials,
            started_at: time_field("buildStartedOn")?,
            finished_at: time_field("buildFinishedOn")?,
        };
        if statement.finished_at < statement.started_at {
            return Err(malformed("buildFinishedOn precedes buildStartedOn"));
        }
        Ok(statement)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonicalize(&self.to_document())
    }

    pub fn digest(&self) -> Digest {
        self.to_document().digest()
    }
}

/// Builds a statement for one subject from a build record.
///
/// The record must carry `builderId`, `buildType` and `invocation`; it may
/// carry `subjectName`, `startedAt` and `finishedAt` (RFC 3339). Missing
/// times default to `now`.
pub fn generate_statement(
    build_record: &Document,
    subject_digest: Digest,
    materials: &[DependencyRef],
    now: Timestamp,
) -> Result<ProvenanceStatement, ProvenanceError> {
    let text_field = |key: &str| -> Result<String, ProvenanceError> {
        build_record
            .get(key)
            .and_then(Document::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProvenanceError::MissingBuildField(key.to_string()))
    };
    let builder_id = text_field("builderId")?;
    let build_type = text_field("buildType")?;
    let invocation = build_record
        .get("invocation")
        .filter(|d| !d.is_null())
        .cloned()
        .ok_or_else(|| ProvenanceError::MissingBuildField("invocation".into()))?;
    let time = |key: &str| -> Result<Timestamp, ProvenanceError> {
        match build_record.get(key).and_then(Document::as_str) {
            Some(t) => t.parse().map_err(ProvenanceError::MalformedStatement),
            None => Ok(now),
        }
    };
    let started_at = time("startedAt")?;
    let finished_at = time("finishedAt")?;
    if finished_at < started_at {
        return Err(ProvenanceError::MalformedStatement("finishedAt precedes startedAt".into()));
    }
    let name = build_record.get("subjectName").and_then(Document::as_str).unwrap_or("artifact");
    Ok(ProvenanceStatement {
        subject: vec![Subject { name: name.to_string(), digest: subject_digest }],
        builder_id,
        build_type,
        invocation,
        materials: materials.iter().map(|d| Material { uri: material_uri(&d.module_id()), digest: d.digest }).collect(),
        started_at,
        finished_at,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSignature {
    pub keyid: String,
    pub cert: IdentityCertificate,
    #[serde(with = "crate::encoding::base64_bytes")]
    pub sig: Vec<u8>,
}

/// DSSE envelope. On the wire the payload is base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Envelope {
    pub payload_type: String,
    #[serde(with = "crate::encoding::base64_bytes")]
    pub payload: Vec<u8>,
    pub signatures: Vec<EnvelopeSignature>,
}

impl Envelope {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("envelope is representable")
    }

    pub fn from_document(doc: &Document) -> Result<Self, ProvenanceError> {
        from_document(doc).map_err(|e| ProvenanceError::MalformedEnvelope(e.to_string()))
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonicalize(&self.to_document())
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, ProvenanceError> {
        let doc = Document::from_json_slice(bytes).map_err(|e| ProvenanceError::MalformedEnvelope(e.to_string()))?;
        Envelope::from_document(&doc)
    }

    pub fn payload_base64(&self) -> String {
        b64_encode(&self.payload)
    }

    pub fn set_payload_base64(&mut self, text: &str) -> Result<(), ProvenanceError> {
        self.payload = b64_decode(text).map_err(|e| ProvenanceError::MalformedEnvelope(e.to_string()))?;
        Ok(())
    }
}

/// DSSE pre-authentication encoding:
/// `DSSEv1 <len(type)> <type> <len(payload)> <payload>`.
pub fn pae(payload_type: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("DSSEv1 {} {} {} ", payload_type.len(), payload_type, payload.len()).into_bytes();
    out.extend_from_slice(payload);
    out
}

/// Signs arbitrary payload bytes. [`wrap_envelope`] is the normal entry
/// point; this one exists for payloads that are not statements.
pub fn seal_payload(
    payload_type: &str,
    payload: Vec<u8>,
    signer: &EphemeralSigner,
    now: Timestamp,
) -> Result<Envelope, ProvenanceError> {
    let cert = signer.certificate();
    if !cert.covers(now) {
        return Err(ProvenanceError::ExpiredCertificate);
    }
    let sig = signer.handle().sign(&pae(payload_type, &payload));
    Ok(Envelope {
        payload_type: payload_type.to_string(),
        payload,
        signatures: vec![EnvelopeSignature { keyid: cert.serial_hex(), cert: cert.clone(), sig }],
    })
}

pub fn wrap_envelope(
    statement: &ProvenanceStatement,
    signer: &EphemeralSigner,
    now: Timestamp,
) -> Result<Envelope, ProvenanceError> {
    seal_payload(PAYLOAD_TYPE, statement.canonical_bytes(), signer, now)
}

/// Set of CA roots accepted for envelope signatures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustRootSet(Vec<PublicKey>);

impl TrustRootSet {
    pub fn new(roots: impl IntoIterator<Item = PublicKey>) -> Self {
        TrustRootSet(roots.into_iter().collect())
    }

    pub fn single(root: PublicKey) -> Self {
        TrustRootSet(vec![root])
    }

    pub fn roots(&self) -> &[PublicKey] {
        &self.0
    }
}

/// Verified statement together with the identity that signed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedStatement {
    pub statement: ProvenanceStatement,
    pub signer: String,
}

/// Verifies the envelope as of the log integration time `at`.
pub fn verify_envelope(
    env: &Envelope,
    roots: &TrustRootSet,
    at: Timestamp,
) -> Result<ProvenanceStatement, ProvenanceError> {
    verify_envelope_signer(env, roots, at).map(|v| v.statement)
}

pub fn verify_envelope_signer(
    env: &Envelope,
    roots: &TrustRootSet,
    at: Timestamp,
) -> Result<VerifiedStatement, ProvenanceError> {
    let message = pae(&env.payload_type, &env.payload);
    let mut first_error = None;
    let mut signer = None;
    for s in &env.signatures {
        match check_signature(s, roots, at, &message) {
            Ok(()) => {
                signer = Some(s.cert.subject.clone());
                break;
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let signer = signer.ok_or_else(|| first_error.unwrap_or(ProvenanceError::SignatureMismatch))?;

    if env.payload_type != PAYLOAD_TYPE {
        return Err(ProvenanceError::UnsupportedPayloadType(env.payload_type.clone()));
    }
    let doc = Document::from_json_slice(&env.payload).map_err(|_| ProvenanceError::NonCanonicalPayload)?;
    if canonicalize(&doc) != env.payload {
        return Err(ProvenanceError::NonCanonicalPayload);
    }
    let statement = ProvenanceStatement::from_document(&doc)?;
    Ok(VerifiedStatement { statement, signer })
}

fn check_signature(
    s: &EnvelopeSignature,
    roots: &TrustRootSet,
    at: Timestamp,
    message: &[u8],
) -> Result<(), ProvenanceError> {
    if !roots.roots().iter().any(|root| s.cert.verify_chain(root).is_ok()) {
        return Err(ProvenanceError::UntrustedIssuer);
    }
    if !s.cert.covers(at) {
        return Err(ProvenanceError::ExpiredCertificate);
    }
    if !s.cert.public_key.verify(message, &s.sig) {
        return Err(ProvenanceError::SignatureMismatch);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StatementField {
    Subject,
    BuilderId,
    BuildType,
    Invocation,
    Materials,
}

impl StatementField {
    pub fn name(self) -> &'static str {
        match self {
            StatementField::Subject => "subject",
            StatementField::BuilderId => "builderId",
            StatementField::BuildType => "buildType",
            StatementField::Invocation => "invocation",
            StatementField::Materials => "materials",
        }
    }

    fn is_missing(self, s: &ProvenanceStatement) -> bool {
        match self {
            StatementField::Subject => s.subject.is_empty(),
            StatementField::BuilderId => s.builder_id.is_empty(),
            StatementField::BuildType => s.build_type.is_empty(),
            StatementField::Invocation => s.invocation.is_null(),
            StatementField::Materials => s.materials.is_empty(),
        }
    }
}

impl fmt::Display for StatementField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletenessPolicy {
    pub required_fields: BTreeSet<StatementField>,
    pub require_materials_for_all_deps: bool,
}

impl CompletenessPolicy {
    /// Requires nothing.
    pub fn empty() -> Self {
        CompletenessPolicy { required_fields: BTreeSet::new(), require_materials_for_all_deps: false }
    }
}

impl Default for CompletenessPolicy {
    fn default() -> Self {
        CompletenessPolicy {
            required_fields: [
                StatementField::BuilderId,
                StatementField::BuildType,
                StatementField::Invocation,
                StatementField::Subject,
            ]
            .into_iter()
            .collect(),
            require_materials_for_all_deps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum MaterialIssue {
    Absent,
    DigestMismatch { declared: Digest, recorded: Digest },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DependencyFinding {
    pub dependency: ModuleId,
    pub issue: MaterialIssue,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletenessReport {
    pub missing_fields: BTreeSet<StatementField>,
    pub dependency_findings: Vec<DependencyFinding>,
}

impl CompletenessReport {
    pub fn is_complete(&self) -> bool {
        self.missing_fields.is_empty() && self.dependency_findings.is_empty()
    }
}

pub fn check_completeness(
    statement: &ProvenanceStatement,
    policy: &CompletenessPolicy,
    declared_deps: &[DependencyRef],
) -> CompletenessReport {
    let missing_fields = policy.required_fields.iter().copied().filter(|f| f.is_missing(statement)).collect();
    let mut dependency_findings = Vec::new();
    if policy.require_materials_for_all_deps {
        for dep in declared_deps {
            let uri = material_uri(&dep.module_id());
            let issue = match statement.materials.iter().find(|m| m.uri == uri) {
                None => Some(MaterialIssue::Absent),
                Some(m) if m.digest != dep.digest => {
                    Some(MaterialIssue::DigestMismatch { declared: dep.digest, recorded: m.digest })
                }
                Some(_) => None,
            };
            if let Some(issue) = issue {
                dependency_findings.push(DependencyFinding { dependency: dep.module_id(), issue });
            }
        }
    }
    CompletenessReport { missing_fields, dependency_findings }
}
