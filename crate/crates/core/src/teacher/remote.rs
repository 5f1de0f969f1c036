//! HTTP backend for OpenAI-compatible completion endpoints.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Decoding};

/// Which request shape the endpoint speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    /// `POST {base}/chat/completions` with a single user message.
    #[default]
    Chat,
    /// `POST {base}/completions` with a raw prompt (davinci-era models).
    Completions,
}

pub struct RemoteBackend {
    client: Client,
    base_url: String,
    model: String,
    style: ApiStyle,
    api_key: String,
}

impl RemoteBackend {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        style: ApiStyle,
        api_key: impl Into<String>,
    ) -> Result<Self, reqwest::Error> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()?;
        Ok(RemoteBackend {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            style,
            api_key: api_key.into(),
        })
    }

    pub(crate) fn request_body(&self, prompt: &str, decoding: &Decoding) -> (String, Value) {
        match self.style {
            ApiStyle::Chat => (
                format!("{}/chat/completions", self.base_url),
                json!({
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": decoding.temperature,
                    "max_tokens": decoding.max_output_tokens,
                }),
            ),
            ApiStyle::Completions => (
                format!("{}/completions", self.base_url),
                json!({
                    "model": self.model,
                    "prompt": prompt,
                    "temperature": decoding.temperature,
                    "max_tokens": decoding.max_output_tokens,
                }),
            ),
        }
    }

    fn redact(&self, s: &str) -> String {
        if self.api_key.is_empty() {
            s.to_string()
        } else {
            s.replace(&self.api_key, "[REDACTED]")
        }
    }
}

pub(crate) fn classify_status(status: StatusCode, body: &str) -> BackendError {
    let msg = format!(
        "HTTP {status}: {}",
        body.chars().take(300).collect::<String>()
    );
    if status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
    {
        BackendError::Transient(msg)
    } else {
        BackendError::Fatal(msg)
    }
}

pub(crate) fn extract_text(style: ApiStyle, body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    let text = match style {
        ApiStyle::Chat => choice.get("message")?.get("content")?.as_str()?,
        ApiStyle::Completions => choice.get("text")?.as_str()?,
    };
    Some(text.trim().to_string())
}

impl Backend for RemoteBackend {
    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError> {
        let (url, body) = self.request_body(prompt, decoding);
        tracing::debug!(%url, body = %self.redact(&body.to_string()), "teacher request");
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(self.redact(&e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        tracing::debug!(%status, body = %self.redact(&text), "teacher response");
        if !status.is_success() {
            return Err(classify_status(status, &self.redact(&text)));
        }
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transient(format!("unparseable response: {e}")))?;
        extract_text(self.style, &parsed)
            .ok_or_else(|| BackendError::Transient("response has no completion text".into()))
    }
}
