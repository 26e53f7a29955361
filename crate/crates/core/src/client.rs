//! Minimal JSON-over-HTTP helper shared by the optional external clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("http request failed: {0}")]
    Http(#[from] ureq::Error),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    url: String,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    /// Reads `var` and builds a client when it holds a non-empty URL.
    pub fn from_env(var: &str, timeout: Duration) -> Option<Self> {
        std::env::var(var)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .map(|u| Self::new(u, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        let mut response = self.agent.post(&self.url).send_json(body)?;
        Ok(response.body_mut().read_json::<Resp>()?)
    }
}
