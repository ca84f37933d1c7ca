//! Blocking HTTP client for tests against a running registry.

use hcmr_core::digests::Document;

pub struct Client {
    agent: ureq::Agent,
    base: String,
}

/// Status plus raw body and content headers of interest.
#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
    pub allow_origin: Option<String>,
}

impl Response {
    /// The body as a strictly parsed canonical document.
    pub fn doc(&self) -> Document {
        Document::from_json_slice(&self.body)
            .unwrap_or_else(|e| panic!("non-canonical body ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    /// `error` field of an error body.
    pub fn error(&self) -> String {
        self.doc().get("error").and_then(Document::as_str).unwrap_or_default().to_string()
    }
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client { agent, base: base.into() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn read(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Response, ureq::Error> {
        let mut r = r?;
        let allow_origin =
            r.headers().get("access-control-allow-origin").and_then(|v| v.to_str().ok()).map(str::to_string);
        let body = r.body_mut().with_config().limit(1 << 30).read_to_vec()?;
        Ok(Response { status: r.status().as_u16(), body, allow_origin })
    }

    fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Response {
        Self::read(r).expect("transport")
    }

    pub fn try_get(&self, path: &str) -> Result<Response, ureq::Error> {
        Self::read(self.agent.get(format!("{}{path}", self.base)).header("origin", "http://ui.test").call())
    }

    pub fn get(&self, path: &str) -> Response {
        self.try_get(path).expect("transport")
    }

    pub fn post_bytes(&self, path: &str, body: &[u8]) -> Response {
        Self::finish(
            self.agent.post(format!("{}{path}", self.base)).header("content-type", "application/json").send(body),
        )
    }

    pub fn post(&self, path: &str, doc: &Document) -> Response {
        self.post_bytes(path, doc.to_canonical_string().as_bytes())
    }

    pub fn post_empty(&self, path: &str) -> Response {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_empty())
    }

    /// A CORS preflight for `method` from a browser origin.
    pub fn preflight(&self, path: &str, method: &str) -> Response {
        Self::finish(
            self.agent
                .options(format!("{}{path}", self.base))
                .header("origin", "http://ui.test")
                .header("access-control-request-method", method)
                .header("access-control-request-headers", "content-type")
                .call(),
        )
    }
}
