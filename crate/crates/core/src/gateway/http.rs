//! OpenAI-style chat-completion backend over blocking HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest};
use crate::config::GenerationParams;

pub const ENV_ENDPOINT: &str = "COHORTFORGE_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "COHORTFORGE_LLM_MODEL";
pub const ENV_API_KEY: &str = "COHORTFORGE_LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// `endpoint` is the full chat-completions URL.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    /// Reads endpoint, model and key from the environment. The model falls
    /// back to `params.model`.
    pub fn from_env(params: &GenerationParams) -> Result<Self, String> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| format!("{ENV_ENDPOINT} is not set"))?;
        let model = std::env::var(ENV_MODEL)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .or_else(|| params.model.clone())
            .ok_or_else(|| format!("{ENV_MODEL} is not set and the config names no model"))?;
        let api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Ok(Self::new(
            endpoint,
            model,
            api_key,
            Duration::from_secs(params.request_timeout_secs),
        ))
    }

    pub fn request_body(&self, req: &GenerationRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.bundle.system_text},
                {"role": "user", "content": req.bundle.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        })
    }
}

/// Maps an HTTP status and body to a completion or a classified error.
pub(crate) fn interpret_response(status: u16, retry_after: Option<Duration>, body: &str) -> Result<String, BackendError> {
    let snippet: String = body.chars().take(200).collect();
    match status {
        200..=299 => {}
        401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {snippet}"))),
        429 => {
            return Err(BackendError::RateLimited {
                message: format!("HTTP 429: {snippet}"),
                retry_after,
            })
        }
        408 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {snippet}"))),
        _ => return Err(BackendError::Permanent(format!("HTTP {status}: {snippet}"))),
    }
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("response has no choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let body = self.request_body(req).to_string();
        let mut call = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(body.as_str()).map_err(|e| match e {
            ureq::Error::Timeout(_)
            | ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound => BackendError::Transient(e.to_string()),
            other => BackendError::Permanent(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("reading response body: {e}")))?;
        interpret_response(status, retry_after, &text)
    }
}
