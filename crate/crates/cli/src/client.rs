//! Registry HTTP client and a read-only remote artifact store.

use hcmr_core::digests::{Digest, Document};
use hcmr_core::store::{ArtifactStore, StoreError};

use crate::Failure;

#[derive(Clone)]
pub struct Api {
    agent: ureq::Agent,
    base: String,
}

enum Fetched {
    Ok(Vec<u8>),
    Err(u16, Vec<u8>),
}

impl Api {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(120)))
            .build()
            .into();
        Api { agent, base: base.trim_end_matches('/').to_string() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn transport(&self, e: ureq::Error) -> Failure {
        Failure::Transport(format!("{}: {e}", self.base))
    }

    fn fetch(&self, r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Fetched, Failure> {
        let mut r = r.map_err(|e| self.transport(e))?;
        let status = r.status().as_u16();
        let body = r.body_mut().with_config().limit(1 << 30).read_to_vec().map_err(|e| self.transport(e))?;
        Ok(if (200..300).contains(&status) { Fetched::Ok(body) } else { Fetched::Err(status, body) })
    }

    fn document(&self, fetched: Fetched) -> Result<Document, Failure> {
        let parse = |body: &[u8]| {
            Document::from_json_slice(body)
                .map_err(|e| Failure::Transport(format!("{}: response is not a canonical document: {e}", self.base)))
        };
        match fetched {
            Fetched::Ok(body) => parse(&body),
            Fetched::Err(status, body) => {
                let mut doc = parse(&body)?;
                if let Document::Map(m) = &mut doc {
                    m.insert("status".into(), Document::Int(status.into()));
                }
                Err(Failure::Report(doc))
            }
        }
    }

    pub fn get(&self, path: &str) -> Result<Document, Failure> {
        let fetched = self.fetch(self.agent.get(format!("{}{path}", self.base)).call())?;
        self.document(fetched)
    }

    pub fn post(&self, path: &str, body: &Document) -> Result<Document, Failure> {
        let fetched = self.fetch(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(body.to_canonical_string().as_bytes()),
        )?;
        self.document(fetched)
    }

    /// Raw artifact bytes; `None` when the registry has none.
    pub fn artifact(&self, digest: &Digest) -> Result<Option<Vec<u8>>, Failure> {
        match self.fetch(self.agent.get(format!("{}/v1/artifacts/{digest}", self.base)).call())? {
            Fetched::Ok(body) => Ok(Some(body)),
            Fetched::Err(404, _) => Ok(None),
            err => self.document(err).map(|_| None),
        }
    }
}

/// Artifact store backed by `GET /v1/artifacts/{digest}`. Bytes come back
/// unchecked; resolution re-hashes them.
pub struct RemoteStore(pub Api);

impl ArtifactStore for RemoteStore {
    fn put(&self, _: &[u8]) -> Result<Digest, StoreError> {
        Err(StoreError("remote store is read-only".into()))
    }

    fn get(&self, digest: &Digest) -> Result<Option<Vec<u8>>, StoreError> {
        self.0.artifact(digest).map_err(|f| StoreError(f.to_string()))
    }
}
