//! Chat-completion providers.
//!
//! [`CompletionProvider`] is the single seam the engine talks to. [`Router`]
//! resolves a provider-qualified model id (`"openai/gpt-4o-mini"`) to an HTTP
//! endpoint and speaks the OpenAI chat-completions dialect, adapting it for
//! providers that use another wire format. [`ScriptedProvider`] and
//! [`EchoProvider`] are deterministic in-process doubles.

mod credentials;
mod http;
mod mock;
mod provider;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use credentials::Credentials;
pub use http::{HttpReply, HttpTransport, ReqwestTransport, TransportError};
pub use mock::{prompt_hash, EchoProvider, ScriptedProvider};
pub use provider::{
    resolve_provider, CustomEndpoint, Dialect, ResolvedProvider, RetryPolicy, Router, RouterConfig,
    DEFAULT_TIMEOUT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.0, 2.0);

impl CompletionRequest {
    /// Builds a request, clamping sampling parameters into range.
    ///
    /// Creativity maps to temperature and diversity to top-p unchanged; values
    /// outside `[0, 2]` and `(0, 1]` are clamped with a warning.
    pub fn new(model: impl Into<String>, messages: Vec<Message>, creativity: f64, diversity: f64, max_tokens: u32) -> Self {
        let temperature = creativity.clamp(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1);
        if temperature != creativity {
            tracing::warn!(creativity, temperature, "creativity clamped into [0, 2]");
        }
        let top_p = if diversity.is_nan() { 1.0 } else { diversity.clamp(f64::MIN_POSITIVE, 1.0) };
        if top_p != diversity {
            tracing::warn!(diversity, top_p, "diversity clamped into (0, 1]");
        }
        CompletionRequest {
            model: model.into(),
            messages,
            temperature,
            top_p,
            max_tokens: max_tokens.max(1),
        }
    }

    pub(crate) fn check(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("messages must not be empty".into())),
            Some(m) if m.role == Role::Assistant => Err(LlmError::InvalidRequest(
                "first message must be a system or user message".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Usage,
    pub provider: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("missing credential: set {0} in the environment or .env")]
    MissingCredential(String),
    #[error("unknown provider `{0}` (no built-in or custom endpoint)")]
    UnknownProvider(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("mock script exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("no scripted response for prompt hash {0}")]
    UnknownKey(String),
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for &T {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}
