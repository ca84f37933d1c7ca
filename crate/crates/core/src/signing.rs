//! Identity-bound ephemeral signing.
//!
//! The flow mirrors keyless signing: a local identity provider issues a
//! signed [`IdentityAssertion`], the [`CertificateAuthority`] exchanges it
//! for a certificate over a freshly generated public key that is valid for
//! [`CERT_VALIDITY_SECS`], the holder signs an artifact digest with the
//! matching [`SigningHandle`], and verifiers check the bundle against the CA
//! root at the transparency-log integration time.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::{OsRng, StdRng};
use rand::{RngCore, SeedableRng};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digests::{canonicalize, from_document, to_document, Digest, Document};
use crate::encoding::{b64_decode, b64_encode, base64_bytes, hex_array};
use crate::time::Timestamp;

/// Maximum (and exact) lifetime of an issued certificate.
pub const CERT_VALIDITY_SECS: i64 = 600;

pub const DEFAULT_AUDIENCE: &str = "hcmr";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigningError {
    #[error("invalid identity assertion: {0}")]
    InvalidAssertion(String),
    #[error("identity assertion expired")]
    ExpiredAssertion,
    #[error("certificate expired or not yet valid")]
    ExpiredCertificate,
    #[error("signing key does not match certificate public key")]
    KeyMismatch,
    #[error("signature does not verify")]
    SignatureMismatch,
    #[error("certificate does not chain to a trusted root")]
    UntrustedIssuer,
    #[error("integration time outside certificate validity window")]
    OutsideValidityWindow,
    #[error("signed digest differs from the artifact digest")]
    DigestMismatch,
    #[error("malformed token: {0}")]
    MalformedToken(String),
    #[error("key file error: {0}")]
    KeyFile(String),
}

impl SigningError {
    pub fn variant(&self) -> &'static str {
        match self {
            SigningError::InvalidAssertion(_) => "InvalidAssertion",
            SigningError::ExpiredAssertion => "ExpiredAssertion",
            SigningError::ExpiredCertificate => "ExpiredCertificate",
            SigningError::KeyMismatch => "KeyMismatch",
            SigningError::SignatureMismatch => "SignatureMismatch",
            SigningError::UntrustedIssuer => "UntrustedIssuer",
            SigningError::OutsideValidityWindow => "OutsideValidityWindow",
            SigningError::DigestMismatch => "DigestMismatch",
            SigningError::MalformedToken(_) => "MalformedToken",
            SigningError::KeyFile(_) => "KeyFile",
        }
    }
}

/// Ed25519 public key, hex in documents and key files.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_hex(text: &str) -> Result<Self, SigningError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut out)
            .map_err(|e| SigningError::KeyFile(format!("bad public key hex: {e}")))?;
        Ok(PublicKey(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Strict Ed25519 verification.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(signature) else {
            return false;
        };
        key.verify_strict(message, &sig).is_ok() && key.verify(message, &sig).is_ok()
    }

    /// Reads a one-line lowercase hex key file.
    pub fn read_file(path: &Path) -> Result<Self, SigningError> {
        let text = fs::read_to_string(path).map_err(|e| SigningError::KeyFile(format!("{}: {e}", path.display())))?;
        PublicKey::from_hex(&text)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SigningError> {
        fs::write(path, format!("{}\n", self.to_hex()))
            .map_err(|e| SigningError::KeyFile(format!("{}: {e}", path.display())))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(de::Error::custom)
    }
}

/// Long-lived key of a trust service (identity provider, CA, log).
///
/// These live in the operator's key directory, never in the registry store.
pub struct ServiceKey(SigningKey);

impl ServiceKey {
    pub fn generate() -> Self {
        ServiceKey(SigningKey::generate(&mut OsRng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        ServiceKey(SigningKey::from_bytes(&seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.0.sign(message).to_bytes().to_vec()
    }

    pub fn read_file(path: &Path) -> Result<Self, SigningError> {
        let text = fs::read_to_string(path).map_err(|e| SigningError::KeyFile(format!("{}: {e}", path.display())))?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut seed)
            .map_err(|e| SigningError::KeyFile(format!("{}: {e}", path.display())))?;
        Ok(ServiceKey::from_seed(seed))
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SigningError> {
        fs::write(path, format!("{}\n", hex::encode(self.0.to_bytes())))
            .map_err(|e| SigningError::KeyFile(format!("{}: {e}", path.display())))
    }
}

impl fmt::Debug for ServiceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ServiceKey(public={})", self.public_key())
    }
}

/// Ephemeral signing key for one signing session.
///
/// Not `Clone`, not serializable; key material is zeroized on drop.
pub struct SigningHandle(SigningKey);

impl SigningHandle {
    pub fn generate() -> Self {
        SigningHandle(SigningKey::generate(&mut OsRng))
    }

    /// Deterministic handle, for reproducible fixtures.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SigningHandle(SigningKey::from_bytes(&seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.0.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for SigningHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningHandle(public={})", self.public_key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IdentityAssertion {
    pub subject: String,
    pub issuer: String,
    pub audience: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    #[serde(with = "base64_bytes")]
    pub proof: Vec<u8>,
}

impl IdentityAssertion {
    /// The document the issuer signs: every field except `proof`.
    pub fn body(&self) -> Document {
        Document::map([
            ("audience", self.audience.as_str().into()),
            ("expiresAt", self.expires_at.to_string().into()),
            ("issuedAt", self.issued_at.to_string().into()),
            ("issuer", self.issuer.as_str().into()),
            ("subject", self.subject.as_str().into()),
        ])
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("assertion is representable")
    }

    /// Base64 of the canonical assertion document.
    pub fn to_token(&self) -> String {
        b64_encode(&canonicalize(&self.to_document()))
    }

    pub fn from_token(token: &str) -> Result<Self, SigningError> {
        let bytes = b64_decode(token).map_err(|e| SigningError::MalformedToken(e.to_string()))?;
        let doc = Document::from_json_slice(&bytes).map_err(|e| SigningError::MalformedToken(e.to_string()))?;
        from_document(&doc).map_err(|e| SigningError::MalformedToken(e.to_string()))
    }

    /// Checks the issuer proof, audience and validity at `now`.
    pub fn verify(
        &self,
        issuer_key: &PublicKey,
        expected_issuer: &str,
        audience: &str,
        now: Timestamp,
    ) -> Result<(), SigningError> {
        if self.subject.is_empty() {
            return Err(SigningError::InvalidAssertion("empty subject".into()));
        }
        if self.expires_at <= self.issued_at {
            return Err(SigningError::InvalidAssertion("expiresAt not after issuedAt".into()));
        }
        if self.issuer != expected_issuer {
            return Err(SigningError::InvalidAssertion(format!("unknown issuer `{}`", self.issuer)));
        }
        if self.audience != audience {
            return Err(SigningError::InvalidAssertion(format!("wrong audience `{}`", self.audience)));
        }
        if !issuer_key.verify(&canonicalize(&self.body()), &self.proof) {
            return Err(SigningError::InvalidAssertion("proof does not verify".into()));
        }
        if now < self.issued_at || now >= self.expires_at {
            return Err(SigningError::ExpiredAssertion);
        }
        Ok(())
    }
}

/// Local development identity provider.
pub struct IdentityProvider {
    issuer: String,
    key: ServiceKey,
}

impl IdentityProvider {
    pub fn new(issuer: impl Into<String>, key: ServiceKey) -> Self {
        IdentityProvider { issuer: issuer.into(), key }
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn assert_identity(&self, subject: &str, audience: &str, now: Timestamp, ttl_secs: i64) -> IdentityAssertion {
        let mut assertion = IdentityAssertion {
            subject: subject.to_string(),
            issuer: self.issuer.clone(),
            audience: audience.to_string(),
            issued_at: now,
            expires_at: now.plus_secs(ttl_secs),
            proof: Vec::new(),
        };
        assertion.proof = self.key.sign(&canonicalize(&assertion.body()));
        assertion
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IdentityCertificate {
    pub subject: String,
    pub public_key: PublicKey,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
    #[serde(with = "hex_array")]
    pub serial: [u8; 16],
    #[serde(with = "base64_bytes")]
    pub issuer_signature: Vec<u8>,
}

impl IdentityCertificate {
    pub fn body(&self) -> Document {
        Document::map([
            ("notAfter", self.not_after.to_string().into()),
            ("notBefore", self.not_before.to_string().into()),
            ("publicKey", self.public_key.to_hex().into()),
            ("serial", hex::encode(self.serial).into()),
            ("subject", self.subject.as_str().into()),
        ])
    }

    pub fn to_document(&self) -> Document {
        to_document(self).expect("certificate is representable")
    }

    pub fn serial_hex(&self) -> String {
        hex::encode(self.serial)
    }

    pub fn covers(&self, t: Timestamp) -> bool {
        self.not_before <= t && t <= self.not_after
    }

    /// Issuer signature and window-length check against one CA root.
    pub fn verify_chain(&self, ca_root: &PublicKey) -> Result<(), SigningError> {
        let window = self.not_after.unix() - self.not_before.unix();
        if !(0..=CERT_VALIDITY_SECS).contains(&window) {
            return Err(SigningError::UntrustedIssuer);
        }
        if !ca_root.verify(&canonicalize(&self.body()), &self.issuer_signature) {
            return Err(SigningError::UntrustedIssuer);
        }
        Ok(())
    }
}

/// Local certificate authority that exchanges identity assertions for
/// short-lived certificates.
pub struct CertificateAuthority {
    key: ServiceKey,
    identity_issuer: String,
    identity_key: PublicKey,
    audience: String,
    serials: Mutex<StdRng>,
}

impl CertificateAuthority {
    pub fn new(key: ServiceKey, identity_issuer: impl Into<String>, identity_key: PublicKey) -> Self {
        CertificateAuthority {
            key,
            identity_issuer: identity_issuer.into(),
            identity_key,
            audience: DEFAULT_AUDIENCE.to_string(),
            serials: Mutex::new(StdRng::from_entropy()),
        }
    }

    /// Replaces the serial source with a seeded one, for reproducible fixtures.
    pub fn with_serial_seed(mut self, seed: u64) -> Self {
        self.serials = Mutex::new(StdRng::seed_from_u64(seed));
        self
    }

    pub fn root(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn issue_certificate(
        &self,
        assertion: &IdentityAssertion,
        public_key: PublicKey,
        now: Timestamp,
    ) -> Result<IdentityCertificate, SigningError> {
        assertion.verify(&self.identity_key, &self.identity_issuer, &self.audience, now)?;
        let mut serial = [0u8; 16];
        self.serials.lock().expect("serial source poisoned").fill_bytes(&mut serial);
        let mut cert = IdentityCertificate {
            subject: assertion.subject.clone(),
            public_key,
            not_before: now,
            not_after: now.plus_secs(CERT_VALIDITY_SECS),
            serial,
            issuer_signature: Vec::new(),
        };
        cert.issuer_signature = self.key.sign(&canonicalize(&cert.body()));
        Ok(cert)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SignatureBundle {
    pub artifact_digest: Digest,
    #[serde(with = "base64_bytes")]
    pub signature: Vec<u8>,
    pub certificate: IdentityCertificate,
    #[serde(default)]
    pub log_index: Option<u64>,
}

impl SignatureBundle {
    pub fn to_document(&self) -> Document {
        to_document(self).expect("bundle is representable")
    }
}

pub fn sign_artifact(
    digest: &Digest,
    key: &SigningHandle,
    cert: &IdentityCertificate,
    now: Timestamp,
) -> Result<SignatureBundle, SigningError> {
    if !cert.covers(now) {
        return Err(SigningError::ExpiredCertificate);
    }
    if key.public_key() != cert.public_key {
        return Err(SigningError::KeyMismatch);
    }
    Ok(SignatureBundle {
        artifact_digest: *digest,
        signature: key.sign(digest.as_bytes()),
        certificate: cert.clone(),
        log_index: None,
    })
}

/// Returns the certificate subject when the bundle is a valid signature
/// over `digest` by a certificate from `ca_root` that was live at
/// `integration_time`.
pub fn verify_signature(
    bundle: &SignatureBundle,
    digest: &Digest,
    ca_root: &PublicKey,
    integration_time: Timestamp,
) -> Result<String, SigningError> {
    if bundle.artifact_digest != *digest {
        return Err(SigningError::DigestMismatch);
    }
    bundle.certificate.verify_chain(ca_root)?;
    if !bundle.certificate.covers(integration_time) {
        return Err(SigningError::OutsideValidityWindow);
    }
    if !bundle.certificate.public_key.verify(digest.as_bytes(), &bundle.signature) {
        return Err(SigningError::SignatureMismatch);
    }
    Ok(bundle.certificate.subject.clone())
}

/// A signing session: an ephemeral key plus the certificate bound to it.
#[derive(Debug)]
pub struct EphemeralSigner {
    handle: SigningHandle,
    certificate: IdentityCertificate,
}

impl EphemeralSigner {
    /// Generates a fresh key and exchanges `assertion` for a certificate.
    pub fn enroll(
        ca: &CertificateAuthority,
        assertion: &IdentityAssertion,
        now: Timestamp,
    ) -> Result<Self, SigningError> {
        Self::enroll_with(ca, assertion, SigningHandle::generate(), now)
    }

    pub fn enroll_with(
        ca: &CertificateAuthority,
        assertion: &IdentityAssertion,
        handle: SigningHandle,
        now: Timestamp,
    ) -> Result<Self, SigningError> {
        let certificate = ca.issue_certificate(assertion, handle.public_key(), now)?;
        Ok(EphemeralSigner { handle, certificate })
    }

    pub fn from_parts(handle: SigningHandle, certificate: IdentityCertificate) -> Result<Self, SigningError> {
        if handle.public_key() != certificate.public_key {
            return Err(SigningError::KeyMismatch);
        }
        Ok(EphemeralSigner { handle, certificate })
    }

    pub fn handle(&self) -> &SigningHandle {
        &self.handle
    }

    pub fn certificate(&self) -> &IdentityCertificate {
        &self.certificate
    }

    pub fn subject(&self) -> &str {
        &self.certificate.subject
    }

    pub fn sign_artifact(&self, digest: &Digest, now: Timestamp) -> Result<SignatureBundle, SigningError> {
        sign_artifact(digest, &self.handle, &self.certificate, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digests::content_digest;

    const T0: Timestamp = Timestamp::from_unix(1_767_225_600);

    fn setup() -> (IdentityProvider, CertificateAuthority) {
        let idp = IdentityProvider::new("https://idp.test", ServiceKey::from_seed([1; 32]));
        let ca = CertificateAuthority::new(ServiceKey::from_seed([2; 32]), "https://idp.test", idp.public_key());
        (idp, ca)
    }

    #[test]
    fn bad_proof_is_invalid_assertion() {
        let (idp, ca) = setup();
        let mut a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        a.proof[0] ^= 1;
        let err = ca.issue_certificate(&a, SigningHandle::generate().public_key(), T0).unwrap_err();
        assert!(matches!(err, SigningError::InvalidAssertion(_)));
    }

    #[test]
    fn foreign_issuer_key_is_invalid_assertion() {
        let (_, ca) = setup();
        let rogue = IdentityProvider::new("https://idp.test", ServiceKey::from_seed([9; 32]));
        let a = rogue.assert_identity("mallory@example.org", DEFAULT_AUDIENCE, T0, 300);
        assert!(matches!(
            ca.issue_certificate(&a, SigningHandle::generate().public_key(), T0),
            Err(SigningError::InvalidAssertion(_))
        ));
    }

    #[test]
    fn expired_assertion() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let err = ca.issue_certificate(&a, SigningHandle::generate().public_key(), T0.plus_secs(300)).unwrap_err();
        assert_eq!(err, SigningError::ExpiredAssertion);
    }

    #[test]
    fn certificate_carries_subject_and_fixed_window() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let cert = ca.issue_certificate(&a, SigningHandle::generate().public_key(), T0).unwrap();
        assert_eq!(cert.subject, "alice@example.org");
        assert_eq!(cert.not_before, T0);
        assert_eq!(cert.not_after.unix() - cert.not_before.unix(), CERT_VALIDITY_SECS);
        cert.verify_chain(&ca.root()).unwrap();
    }

    #[test]
    fn serials_are_distinct() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let key = SigningHandle::generate().public_key();
        let serials: std::collections::HashSet<[u8; 16]> =
            (0..100).map(|_| ca.issue_certificate(&a, key, T0).unwrap().serial).collect();
        assert_eq!(serials.len(), 100);
    }

    #[test]
    fn sign_and_verify() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let signer = EphemeralSigner::enroll(&ca, &a, T0).unwrap();
        let d = content_digest(b"artifact");
        let bundle = signer.sign_artifact(&d, T0.plus_secs(10)).unwrap();
        assert_eq!(verify_signature(&bundle, &d, &ca.root(), T0.plus_secs(10)).unwrap(), "alice@example.org");
    }

    #[test]
    fn key_mismatch_and_expiry() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let signer = EphemeralSigner::enroll(&ca, &a, T0).unwrap();
        let other = SigningHandle::generate();
        let d = content_digest(b"artifact");
        assert_eq!(sign_artifact(&d, &other, signer.certificate(), T0).unwrap_err(), SigningError::KeyMismatch);
        assert_eq!(
            signer.sign_artifact(&d, T0.plus_secs(CERT_VALIDITY_SECS + 1)).unwrap_err(),
            SigningError::ExpiredCertificate
        );
    }

    #[test]
    fn verification_failures() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let signer = EphemeralSigner::enroll(&ca, &a, T0).unwrap();
        let d = content_digest(b"artifact");
        let bundle = signer.sign_artifact(&d, T0).unwrap();
        let root = ca.root();

        assert_eq!(
            verify_signature(&bundle, &d, &root, T0.plus_secs(601)).unwrap_err(),
            SigningError::OutsideValidityWindow
        );
        assert_eq!(
            verify_signature(&bundle, &content_digest(b"other"), &root, T0).unwrap_err(),
            SigningError::DigestMismatch
        );
        let other_root = ServiceKey::from_seed([7; 32]).public_key();
        assert_eq!(verify_signature(&bundle, &d, &other_root, T0).unwrap_err(), SigningError::UntrustedIssuer);
        let mut forged = bundle.clone();
        forged.signature[5] ^= 0x40;
        assert_eq!(verify_signature(&forged, &d, &root, T0).unwrap_err(), SigningError::SignatureMismatch);
    }

    #[test]
    fn integration_time_governs_validity_not_wall_clock() {
        let (idp, ca) = setup();
        let a = idp.assert_identity("alice@example.org", DEFAULT_AUDIENCE, T0, 300);
        let signer = EphemeralSigner::enroll(&ca, &a, T0).unwrap();
        let d = content_digest(b"artifact");
        let bundle = signer.sign_artifact(&d, T0).unwrap();
        // verified a year later against the log integration time
        let integrated = T0.plus_secs(30);
        assert!(Timestamp::now() > bundle.certificate.not_after);
        assert!(verify_signature(&bundle, &d, &ca.root(), integrated).is_ok());
    }

    #[test]
    fn token_round_trip() {
        let (idp, _) = setup();
        let a = idp.assert_identity("bob@example.org", DEFAULT_AUDIENCE, T0, 300);
        assert_eq!(IdentityAssertion::from_token(&a.to_token()).unwrap(), a);
        assert!(IdentityAssertion::from_token("!!").is_err());
    }
}
