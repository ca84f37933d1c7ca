//! Canonical document encoding and content hashing.
//!
//! Every record that gets hashed or signed in the registry is first reduced
//! to a [`Document`] and rendered with [`canonicalize`]: map keys in byte
//! order, no insignificant whitespace, integers in shortest decimal form and
//! strings with minimal escaping. Floating-point values are not representable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, DeserializeOwned, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// The only accepted digest algorithm identifier.
pub const SHA256: &str = "sha256";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DigestError {
    #[error("document cannot be canonicalized: {0}")]
    NonCanonicalizable(String),
    #[error("malformed digest `{0}`")]
    MalformedDigest(String),
    #[error("unsupported digest algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("duplicate dependency {name}@{version} with conflicting digests")]
    DuplicateDependency { name: String, version: String },
    #[error("invalid dependency reference: {0}")]
    InvalidDependency(String),
    #[error("document shape error: {0}")]
    Shape(String),
}

/// A SHA-256 content digest. Rendered as `sha256:<64 lowercase hex>`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn algorithm(&self) -> &'static str {
        SHA256
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses either `sha256:<hex>` or a bare 64-character hex value.
    pub fn parse(s: &str) -> Result<Self, DigestError> {
        let hex_part = match s.split_once(':') {
            Some((alg, rest)) if alg == SHA256 => rest,
            Some((alg, _)) => return Err(DigestError::UnsupportedAlgorithm(alg.to_string())),
            None => s,
        };
        if hex_part.len() != 64 || hex_part.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(DigestError::MalformedDigest(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(hex_part, &mut out).map_err(|_| DigestError::MalformedDigest(s.to_string()))?;
        Ok(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SHA256}:{}", self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Digest {
    type Err = DigestError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::parse(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::parse(&s).map_err(de::Error::custom)
    }
}

/// SHA-256 over raw bytes.
pub fn content_digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Tree of maps, lists, strings, integers, booleans and null.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Document {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Document>),
    Map(BTreeMap<String, Document>),
}

impl Document {
    pub fn map<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Document)>) -> Document {
        Document::Map(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn empty_map() -> Document {
        Document::Map(BTreeMap::new())
    }

    pub fn get(&self, key: &str) -> Option<&Document> {
        match self {
            Document::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Document::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Document::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Document::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Document]> {
        match self {
            Document::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Document>> {
        match self {
            Document::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Document::Null)
    }

    /// Strict parse of JSON text: rejects floats, duplicate keys and
    /// integers outside the signed 64-bit range.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Document, DigestError> {
        serde_json::from_slice(bytes).map_err(|e| DigestError::NonCanonicalizable(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Document, DigestError> {
        Document::from_json_slice(text.as_bytes())
    }

    /// Canonical text form.
    pub fn to_canonical_string(&self) -> String {
        // canonicalize only ever emits UTF-8
        String::from_utf8(canonicalize(self)).expect("canonical output is UTF-8")
    }

    pub fn digest(&self) -> Digest {
        content_digest(&canonicalize(self))
    }
}

impl From<&str> for Document {
    fn from(s: &str) -> Self {
        Document::Str(s.to_string())
    }
}

impl From<String> for Document {
    fn from(s: String) -> Self {
        Document::Str(s)
    }
}

impl From<i64> for Document {
    fn from(i: i64) -> Self {
        Document::Int(i)
    }
}

impl From<bool> for Document {
    fn from(b: bool) -> Self {
        Document::Bool(b)
    }
}

impl From<Digest> for Document {
    fn from(d: Digest) -> Self {
        Document::Str(d.to_string())
    }
}

impl From<Vec<Document>> for Document {
    fn from(l: Vec<Document>) -> Self {
        Document::List(l)
    }
}

impl Serialize for Document {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Document::Null => serializer.serialize_unit(),
            Document::Bool(b) => serializer.serialize_bool(*b),
            Document::Int(i) => serializer.serialize_i64(*i),
            Document::Str(s) => serializer.serialize_str(s),
            Document::List(l) => serializer.collect_seq(l),
            Document::Map(m) => serializer.collect_map(m),
        }
    }
}

struct DocumentVisitor;

impl<'de> Visitor<'de> for DocumentVisitor {
    type Value = Document;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a structured document without floating-point values")
    }

    fn visit_unit<E: de::Error>(self) -> Result<Document, E> {
        Ok(Document::Null)
    }

    fn visit_none<E: de::Error>(self) -> Result<Document, E> {
        Ok(Document::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Document, D::Error> {
        Document::deserialize(d)
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<Document, E> {
        Ok(Document::Bool(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Document, E> {
        Ok(Document::Int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Document, E> {
        i64::try_from(v)
            .map(Document::Int)
            .map_err(|_| E::custom(format!("integer {v} exceeds the signed 64-bit range")))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Document, E> {
        Err(E::custom(format!("floating-point value {v} is not allowed")))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Document, E> {
        Ok(Document::Str(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<Document, E> {
        Ok(Document::Str(v))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Document, A::Error> {
        let mut out = Vec::new();
        while let Some(item) = seq.next_element::<Document>()? {
            out.push(item);
        }
        Ok(Document::List(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Document, A::Error> {
        let mut out = BTreeMap::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            let value = map.next_value::<Document>()?;
            out.insert(key, value);
        }
        Ok(Document::Map(out))
    }
}

impl<'de> Deserialize<'de> for Document {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(DocumentVisitor)
    }
}

/// Canonical byte encoding of a document.
pub fn canonicalize(doc: &Document) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(doc, &mut out);
    out
}

/// Parses JSON text strictly and re-renders it canonically.
pub fn canonicalize_json(bytes: &[u8]) -> Result<Vec<u8>, DigestError> {
    Ok(canonicalize(&Document::from_json_slice(bytes)?))
}

fn write_canonical(doc: &Document, out: &mut Vec<u8>) {
    match doc {
        Document::Null => out.extend_from_slice(b"null"),
        Document::Bool(true) => out.extend_from_slice(b"true"),
        Document::Bool(false) => out.extend_from_slice(b"false"),
        Document::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Document::Str(s) => write_string(s, out),
        Document::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        Document::Map(entries) => {
            // BTreeMap<String, _> iterates in byte order of the UTF-8 keys.
            out.push(b'{');
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_canonical(v, out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

/// Converts any serializable value into a document. Fails on floats.
pub fn to_document<T: Serialize + ?Sized>(value: &T) -> Result<Document, DigestError> {
    let json = serde_json::to_value(value).map_err(|e| DigestError::Shape(e.to_string()))?;
    serde_json::from_value(json).map_err(|e| DigestError::NonCanonicalizable(e.to_string()))
}

pub fn from_document<T: DeserializeOwned>(doc: &Document) -> Result<T, DigestError> {
    let json = serde_json::to_value(doc).map_err(|e| DigestError::Shape(e.to_string()))?;
    serde_json::from_value(json).map_err(|e| DigestError::Shape(e.to_string()))
}

/// `MAJOR.MINOR.PATCH`, ordered numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version { major, minor, patch }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for Version {
    type Err = DigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DigestError::InvalidDependency(format!("version `{s}` is not MAJOR.MINOR.PATCH"));
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut nums = [0u64; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            let leading_zero = part.len() > 1 && part.starts_with('0');
            if part.is_empty() || leading_zero || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            *slot = part.parse().map_err(|_| bad())?;
        }
        Ok(Version::new(nums[0], nums[1], nums[2]))
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// `(name, version)` identity of a module.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleId {
    pub name: String,
    pub version: Version,
}

impl ModuleId {
    pub fn new(name: impl Into<String>, version: Version) -> Self {
        ModuleId { name: name.into(), version }
    }

    /// Parses `name@MAJOR.MINOR.PATCH`.
    pub fn parse(s: &str) -> Result<Self, DigestError> {
        let (name, version) =
            s.rsplit_once('@').ok_or_else(|| DigestError::InvalidDependency(format!("`{s}` is not name@version")))?;
        if name.is_empty() {
            return Err(DigestError::InvalidDependency("empty module name".into()));
        }
        Ok(ModuleId::new(name, version.parse()?))
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependencyRef {
    pub name: String,
    pub version: Version,
    pub digest: Digest,
}

impl DependencyRef {
    pub fn new(name: impl Into<String>, version: Version, digest: Digest) -> Result<Self, DigestError> {
        let name = name.into();
        if name.is_empty() {
            return Err(DigestError::InvalidDependency("empty dependency name".into()));
        }
        Ok(DependencyRef { name, version, digest })
    }

    pub fn module_id(&self) -> ModuleId {
        ModuleId::new(self.name.clone(), self.version)
    }

    pub fn to_document(&self) -> Document {
        Document::map([
            ("digest", self.digest.into()),
            ("name", self.name.as_str().into()),
            ("version", self.version.to_string().into()),
        ])
    }

    fn sort_key(&self) -> (&str, Version, &[u8; 32]) {
        (&self.name, self.version, self.digest.as_bytes())
    }
}

/// Flat hash of the sorted transitive dependency closure.
///
/// Exact duplicates are collapsed; the same `(name, version)` with two
/// different digests is an error.
pub fn dependency_graph_digest(closure: &[DependencyRef]) -> Result<Digest, DigestError> {
    let mut seen: BTreeMap<(&str, Version), &Digest> = BTreeMap::new();
    for dep in closure {
        if dep.name.is_empty() {
            return Err(DigestError::InvalidDependency("empty dependency name".into()));
        }
        if let Some(prev) = seen.insert((&dep.name, dep.version), &dep.digest) {
            if *prev != dep.digest {
                return Err(DigestError::DuplicateDependency {
                    name: dep.name.clone(),
                    version: dep.version.to_string(),
                });
            }
        }
    }
    let mut sorted: Vec<&DependencyRef> = closure.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    sorted.dedup();
    let doc = Document::List(sorted.into_iter().map(DependencyRef::to_document).collect());
    Ok(doc.digest())
}
