//! Provider abstraction and the remote chat-completion client.

use std::fmt;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatPrompt, DecodingParams, GatewayError, ProviderConfig};

/// Everything a provider needs to answer one prompt.
#[derive(Debug, Clone, Copy)]
pub struct ProviderRequest<'a> {
    pub prompt: &'a ChatPrompt,
    pub model: &'a str,
    pub decoding: &'a DecodingParams,
    pub cache_key: &'a str,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(status: Option<u16>, message: impl Into<String>) -> TransportError {
        TransportError {
            status,
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(status: Option<u16>, message: impl Into<String>) -> TransportError {
        TransportError {
            status,
            message: message.into(),
            retryable: false,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            Some(s) => write!(f, "status {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// A chat model backend. When the prompt carries a pre-generation prefix the
/// provider returns only the continuation; the gateway prepends the prefix.
pub trait Provider: Send + Sync {
    /// Stable identifier that enters the cache key.
    fn id(&self) -> &str;

    fn send(&self, request: &ProviderRequest<'_>) -> Result<String, TransportError>;
}

/// OpenAI-compatible `chat/completions` client.
///
/// A pre-generation prefix is sent as a trailing assistant message, which
/// servers that support continuing the final assistant turn complete in place.
pub struct RemoteChatProvider {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for RemoteChatProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // The credential is deliberately absent from debug output.
        f.debug_struct("RemoteChatProvider")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl RemoteChatProvider {
    /// Resolve the credential from the configured environment variable.
    pub fn from_config(config: &ProviderConfig) -> Result<RemoteChatProvider, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            GatewayError::Config(format!(
                "credential environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        if api_key.trim().is_empty() {
            return Err(GatewayError::Config(format!(
                "credential environment variable {} is empty",
                config.api_key_env
            )));
        }
        Ok(RemoteChatProvider::new(&config.endpoint, api_key, config.request_timeout_s))
    }

    pub fn new(endpoint: &str, api_key: String, timeout_s: u64) -> RemoteChatProvider {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteChatProvider {
            endpoint: endpoint.to_string(),
            api_key,
            agent,
        }
    }

    fn body(request: &ProviderRequest<'_>) -> Value {
        let mut messages: Vec<Value> = request
            .prompt
            .messages()
            .into_iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        if let Some(prefix) = &request.prompt.pre_generation_prefix {
            messages.push(json!({"role": "assistant", "content": prefix}));
        }
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.decoding.temperature,
            "seed": request.seed,
        });
        if let Some(max) = request.decoding.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }
}

impl Provider for RemoteChatProvider {
    fn id(&self) -> &str {
        "remote_chat"
    }

    fn send(&self, request: &ProviderRequest<'_>) -> Result<String, TransportError> {
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(Self::body(request))
            .map_err(|e| TransportError::retryable(None, e.to_string()))?;
        let status = response.status().as_u16();
        let mut body = response.into_body();
        if !(200..300).contains(&status) {
            let text = body.read_to_string().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(if status == 429 || status >= 500 {
                TransportError::retryable(Some(status), snippet)
            } else {
                TransportError::fatal(Some(status), snippet)
            });
        }
        let value: Value = body
            .read_json()
            .map_err(|e| TransportError::retryable(Some(status), format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::retryable(Some(status), "response has no choices[0].message.content"))
    }
}
