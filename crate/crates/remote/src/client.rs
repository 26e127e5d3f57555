use std::time::Duration;

use vivid_core::guidance::DenoiserError;

use crate::protocol::{DenoiseRequest, DenoiseResponse};

pub const TIMEOUT_ENV: &str = "VIVID_REMOTE_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

/// Timeout from the environment, falling back to the default on absence or
/// parse failure.
pub fn timeout_from_env() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

/// Blocking HTTP client for one denoiser endpoint. Cheap to share across
/// threads; connections are pooled.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    /// `endpoint` is the server base URL, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: &str) -> Self {
        Self::with_timeout(endpoint, timeout_from_env())
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { base: endpoint.trim_end_matches('/').to_string(), agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    pub fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, DenoiserError> {
        req.validate().map_err(DenoiserError::Protocol)?;
        let body = serde_json::to_string(req).map_err(|e| DenoiserError::Protocol(e.to_string()))?;
        let url = format!("{}/denoise", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&body)
            .map_err(|e| DenoiserError::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| DenoiserError::Transport(format!("{url}: reading body: {e}")))?;
        if status != 200 {
            return Err(DenoiserError::Remote { status, body: text });
        }
        let parsed: DenoiseResponse =
            serde_json::from_str(&text).map_err(|e| DenoiserError::Protocol(format!("malformed response: {e}")))?;
        parsed.validate_for(req).map_err(DenoiserError::Protocol)?;
        Ok(parsed)
    }

    /// `GET /health`; returns the status code.
    pub fn health(&self) -> Result<u16, DenoiserError> {
        let url = format!("{}/health", self.base);
        let resp = self.agent.get(&url).call().map_err(|e| DenoiserError::Transport(format!("{url}: {e}")))?;
        Ok(resp.status().as_u16())
    }
}

/// One-shot request with an explicit timeout.
pub fn remote_denoise(endpoint: &str, req: &DenoiseRequest, timeout: Duration) -> Result<DenoiseResponse, DenoiserError> {
    RemoteClient::with_timeout(endpoint, timeout).denoise(req)
}
