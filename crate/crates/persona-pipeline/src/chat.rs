//! Chat-completion transport.
//!
//! [`ChatTransport`] is the seam between stages and any chat-capable model:
//! the live implementation speaks the de-facto OpenAI-compatible
//! `/chat/completions` shape over HTTP, and the cassette layer wraps any
//! transport for record/replay. The API key is never configured in files;
//! it is read from the `PERSONA_API_KEY` environment variable.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Environment variable holding the bearer token for chat and embedding
/// endpoints.
pub const API_KEY_VAR: &str = "PERSONA_API_KEY";

/// One message in a chat exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

/// A chat-completion request. Serialized verbatim as the wire payload and
/// as the cassette key, so field order and presence are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    /// Request discriminator for repeated otherwise-identical calls (e.g.
    /// sample i of n); keeps cassette keys collision-free under
    /// temperature-based sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("chat endpoint is not configured")]
    NoEndpoint,
    #[error("chat request failed after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("chat response was not in the expected shape: {message}")]
    BadResponse { message: String },
    #[error("no recorded exchange for this request (cassette replay)")]
    CassetteMiss { key: String },
}

/// Anything that can answer a chat request with the model's text reply.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Serialize)]
struct WirePayload<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

/// Live HTTP chat client with bounded retries and exponential backoff.
pub struct HttpChat {
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpChat {
    /// `endpoint` is the API base (e.g. `https://host/v1`); the
    /// `/chat/completions` path is appended. Reads the API key from
    /// [`API_KEY_VAR`].
    pub fn new(endpoint: &str, max_retries: u32, timeout_secs: u64) -> Result<Self, TransportError> {
        if endpoint.is_empty() {
            return Err(TransportError::NoEndpoint);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| TransportError::BadResponse { message: e.to_string() })?;
        Ok(HttpChat {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            api_key: std::env::var(API_KEY_VAR).ok(),
            max_retries,
            client,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, String> {
        let payload = WirePayload {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
        };
        let url = format!("{}/chat/completions", self.endpoint);
        let mut builder = self.client.post(&url).json(&payload);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status();
        let body = response.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()));
        }
        let parsed: WireResponse =
            serde_json::from_str(&body).map_err(|e| format!("undecodable body: {e}"))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response carried no choices".to_owned())
    }
}

impl ChatTransport for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(message) => last = message,
            }
            if attempt + 1 < attempts {
                std::thread::sleep(Duration::from_millis(100 * (1 << attempt.min(4))));
            }
        }
        Err(TransportError::Exhausted { attempts, message: last })
    }
}

/// Test transport answering from a fixed script, in order.
pub struct ScriptedChat {
    replies: std::sync::Mutex<std::collections::VecDeque<String>>,
}

impl ScriptedChat {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedChat {
            replies: std::sync::Mutex::new(replies.into_iter().map(Into::into).collect()),
        }
    }

    /// Replies left unconsumed (0 when a test used the whole script).
    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl ChatTransport for ScriptedChat {
    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        self.replies.lock().unwrap().pop_front().ok_or(TransportError::Exhausted {
            attempts: 1,
            message: "scripted transport ran out of replies".into(),
        })
    }
}
