use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::http::{HttpTransport, ReqwestTransport};
use super::{
    CompletionProvider, CompletionRequest, CompletionResponse, Credentials, EchoProvider, LlmError, Role, Usage,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// OpenAI chat-completions JSON.
    #[default]
    OpenAi,
    /// Anthropic messages API.
    Anthropic,
    /// In-process test doubles.
    Mock,
}

/// A user-configured endpoint, e.g. a locally hosted model server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomEndpoint {
    /// Full chat-completions URL.
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub dialect: Dialect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedProvider {
    pub provider: String,
    pub model_name: String,
    pub endpoint: String,
    pub credential_var: Option<String>,
    pub dialect: Dialect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after a transport failure. Status errors never retry.
    pub retries: u32,
    #[serde(with = "millis")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base_backoff: Duration::from_millis(500),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    /// Provider used for model ids without a `provider/` prefix.
    pub default_provider: String,
    pub custom_endpoints: HashMap<String, CustomEndpoint>,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            default_provider: "openai".into(),
            custom_endpoints: HashMap::new(),
            timeout: DEFAULT_TIMEOUT,
            retry: RetryPolicy::default(),
        }
    }
}

struct Builtin {
    prefix: &'static str,
    url: &'static str,
    key: Option<&'static str>,
    dialect: Dialect,
}

const BUILTINS: &[Builtin] = &[
    Builtin { prefix: "openai", url: "https://api.openai.com/v1/chat/completions", key: Some("OPENAI_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "anthropic", url: "https://api.anthropic.com/v1/messages", key: Some("ANTHROPIC_API_KEY"), dialect: Dialect::Anthropic },
    Builtin { prefix: "gemini", url: "https://generativelanguage.googleapis.com/v1beta/openai/chat/completions", key: Some("GEMINI_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "groq", url: "https://api.groq.com/openai/v1/chat/completions", key: Some("GROQ_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "deepseek", url: "https://api.deepseek.com/chat/completions", key: Some("DEEPSEEK_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "mistral", url: "https://api.mistral.ai/v1/chat/completions", key: Some("MISTRAL_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "openrouter", url: "https://openrouter.ai/api/v1/chat/completions", key: Some("OPENROUTER_API_KEY"), dialect: Dialect::OpenAi },
    Builtin { prefix: "huggingface", url: "https://router.huggingface.co/v1/chat/completions", key: Some("HF_TOKEN"), dialect: Dialect::OpenAi },
    Builtin { prefix: "ollama", url: "http://localhost:11434/v1/chat/completions", key: None, dialect: Dialect::OpenAi },
    Builtin { prefix: "mock", url: "mock://in-process", key: None, dialect: Dialect::Mock },
];

/// Splits `provider/model` on the first `/` and looks the provider up.
///
/// Custom endpoints are consulted before the built-in table so they can
/// shadow it.
pub fn resolve_provider(model: &str, config: &RouterConfig) -> Result<ResolvedProvider, LlmError> {
    if model.trim().is_empty() {
        return Err(LlmError::InvalidRequest("model must not be empty".into()));
    }
    let (prefix, name) = match model.split_once('/') {
        Some((p, n)) => (p, n),
        None => (config.default_provider.as_str(), model),
    };
    if let Some(custom) = config.custom_endpoints.get(prefix) {
        return Ok(ResolvedProvider {
            provider: prefix.to_owned(),
            model_name: name.to_owned(),
            endpoint: custom.url.clone(),
            credential_var: custom.api_key_env.clone(),
            dialect: custom.dialect,
        });
    }
    BUILTINS
        .iter()
        .find(|b| b.prefix == prefix)
        .map(|b| ResolvedProvider {
            provider: prefix.to_owned(),
            model_name: name.to_owned(),
            endpoint: b.url.to_owned(),
            credential_var: b.key.map(str::to_owned),
            dialect: b.dialect,
        })
        .ok_or_else(|| LlmError::UnknownProvider(prefix.to_owned()))
}

/// Multi-provider client: resolves the model id per request.
pub struct Router {
    config: RouterConfig,
    credentials: Credentials,
    transport: Arc<dyn HttpTransport>,
    mock: Option<Arc<dyn CompletionProvider>>,
}

impl Router {
    pub fn new(config: RouterConfig, credentials: Credentials) -> Self {
        Router {
            config,
            credentials,
            transport: Arc::new(ReqwestTransport::new()),
            mock: None,
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn HttpTransport>) -> Self {
        self.transport = transport;
        self
    }

    /// Provider serving `mock/*` models other than `mock/echo`.
    pub fn with_mock(mut self, mock: Arc<dyn CompletionProvider>) -> Self {
        self.mock = Some(mock);
        self
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn resolve(&self, model: &str) -> Result<ResolvedProvider, LlmError> {
        resolve_provider(model, &self.config)
    }

    fn wire_body(resolved: &ResolvedProvider, req: &CompletionRequest) -> Value {
        match resolved.dialect {
            Dialect::Anthropic => {
                let system: Vec<&str> = req
                    .messages
                    .iter()
                    .filter(|m| m.role == Role::System)
                    .map(|m| m.content.as_str())
                    .collect();
                let messages: Vec<Value> = req
                    .messages
                    .iter()
                    .filter(|m| m.role != Role::System)
                    .map(|m| json!({"role": m.role, "content": m.content}))
                    .collect();
                let mut body = json!({
                    "model": resolved.model_name,
                    "messages": messages,
                    "temperature": req.temperature,
                    "top_p": req.top_p,
                    "max_tokens": req.max_tokens,
                });
                if !system.is_empty() {
                    body["system"] = Value::String(system.join("\n\n"));
                }
                body
            }
            Dialect::OpenAi | Dialect::Mock => json!({
                "model": resolved.model_name,
                "messages": req.messages,
                "temperature": req.temperature,
                "top_p": req.top_p,
                "max_tokens": req.max_tokens,
            }),
        }
    }

    fn headers(resolved: &ResolvedProvider, key: Option<&str>) -> Vec<(String, String)> {
        let mut headers = Vec::new();
        match (resolved.dialect, key) {
            (Dialect::Anthropic, key) => {
                if let Some(k) = key {
                    headers.push(("x-api-key".to_owned(), k.to_owned()));
                }
                headers.push(("anthropic-version".to_owned(), "2023-06-01".to_owned()));
            }
            (_, Some(k)) => headers.push(("authorization".to_owned(), format!("Bearer {k}"))),
            (_, None) => {}
        }
        headers
    }

    fn parse_reply(dialect: Dialect, body: &str) -> Result<(String, Usage), LlmError> {
        let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let num = |v: &Value| v.as_u64().unwrap_or(0);
        match dialect {
            Dialect::Anthropic => {
                let content = v
                    .get("content")
                    .and_then(Value::as_array)
                    .ok_or_else(|| LlmError::MalformedResponse("missing `content` array".into()))?;
                let text = content
                    .iter()
                    .filter(|c| c.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|c| c.get("text").and_then(Value::as_str))
                    .collect::<String>();
                let usage = Usage {
                    prompt_tokens: num(&v["usage"]["input_tokens"]),
                    completion_tokens: num(&v["usage"]["output_tokens"]),
                };
                Ok((text, usage))
            }
            Dialect::OpenAi | Dialect::Mock => {
                let message = v
                    .get("choices")
                    .and_then(|c| c.get(0))
                    .and_then(|c| c.get("message"))
                    .ok_or_else(|| LlmError::MalformedResponse("missing `choices[0].message`".into()))?;
                let text = match message.get("content") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Null) => String::new(),
                    _ => return Err(LlmError::MalformedResponse("missing `choices[0].message.content`".into())),
                };
                let usage = Usage {
                    prompt_tokens: num(&v["usage"]["prompt_tokens"]),
                    completion_tokens: num(&v["usage"]["completion_tokens"]),
                };
                Ok((text, usage))
            }
        }
    }
}

fn excerpt(body: &str) -> String {
    let mut out: String = body.chars().take(BODY_EXCERPT_CHARS).collect();
    if body.chars().count() > BODY_EXCERPT_CHARS {
        out.push('…');
    }
    out
}

impl CompletionProvider for Router {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.check()?;
        let resolved = self.resolve(&req.model)?;
        if resolved.dialect == Dialect::Mock {
            return match (resolved.model_name.as_str(), &self.mock) {
                ("echo", _) => EchoProvider.complete(req),
                (_, Some(mock)) => mock.complete(req),
                (_, None) => Err(LlmError::UnknownProvider(req.model.clone())),
            };
        }
        let key = match &resolved.credential_var {
            Some(var) => Some(
                self.credentials
                    .get(var)
                    .ok_or_else(|| LlmError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let body = Self::wire_body(&resolved, req);
        let headers = Self::headers(&resolved, key);
        let started = Instant::now();
        let mut attempt = 0;
        let reply = loop {
            match self.transport.post_json(&resolved.endpoint, &headers, &body, self.config.timeout) {
                Ok(reply) => break reply,
                Err(e) if attempt < self.config.retry.retries => {
                    let wait = self.config.retry.base_backoff * 2u32.pow(attempt);
                    tracing::warn!(provider = %resolved.provider, attempt, error = %self.credentials.redact(&e.0), "transport error, retrying");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(LlmError::Transport(self.credentials.redact(&e.0))),
            }
        };
        if !(200..300).contains(&reply.status) {
            return Err(LlmError::Status {
                status: reply.status,
                body: self.credentials.redact(&excerpt(&reply.body)),
            });
        }
        let (text, usage) = Self::parse_reply(resolved.dialect, &reply.body)?;
        Ok(CompletionResponse {
            text,
            usage,
            provider: resolved.provider,
            latency: started.elapsed(),
        })
    }
}
