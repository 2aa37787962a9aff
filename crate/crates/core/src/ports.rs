//! Errors shared by external-service ports and a small blocking HTTP client
//! used by the live adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const LLM_BACKEND_ENV: &str = "LLM_BACKEND_URL";
pub const IMG_BACKEND_ENV: &str = "IMG_BACKEND_URL";
pub const MESH_BACKEND_ENV: &str = "MESH_BACKEND_URL";
pub const EMBED_BACKEND_ENV: &str = "EMBED_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PortError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
}

/// Endpoint URL from `var`, ignoring empty values.
pub fn endpoint_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("base", &self.base).finish()
    }
}

fn map_err(url: &str, e: ureq::Error) -> PortError {
    match e {
        ureq::Error::Timeout(_) => PortError::Timeout(url.to_string()),
        ureq::Error::StatusCode(code) if code >= 500 => PortError::Unavailable(format!("{url}: HTTP {code}")),
        ureq::Error::StatusCode(code) => PortError::Rejected(format!("{url}: HTTP {code}")),
        ureq::Error::Json(e) => PortError::Malformed(format!("{url}: {e}")),
        other => PortError::Unavailable(format!("{url}: {other}")),
    }
}

impl HttpClient {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base, path.trim_start_matches('/'))
    }

    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, PortError> {
        let url = self.url(path);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| map_err(&url, e))?;
        resp.body_mut().read_json::<R>().map_err(|e| map_err(&url, e))
    }

    /// JSON request, raw byte reply (images, archives).
    pub fn post_json_for_bytes<B: Serialize>(&self, path: &str, body: &B) -> Result<Vec<u8>, PortError> {
        let url = self.url(path);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| map_err(&url, e))?;
        read_bytes(&url, &mut resp)
    }

    pub fn post_bytes(&self, path: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, PortError> {
        let url = self.url(path);
        let mut resp = self
            .agent
            .post(&url)
            .header("Content-Type", content_type)
            .send(body)
            .map_err(|e| map_err(&url, e))?;
        read_bytes(&url, &mut resp)
    }
}

fn read_bytes(url: &str, resp: &mut ureq::http::Response<ureq::Body>) -> Result<Vec<u8>, PortError> {
    resp.body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| map_err(url, e))
}
