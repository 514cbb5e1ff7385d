use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{CompletionProvider, CompletionRequest, CompletionResponse, LlmError, Message, Role, Usage};

/// Stable hex digest of a message list, used to key scripted responses.
pub fn prompt_hash(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.to_string().as_bytes());
        hasher.update([0u8]);
        hasher.update(m.content.as_bytes());
        hasher.update([0xffu8]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn reply(text: String, provider: &str) -> CompletionResponse {
    CompletionResponse {
        text,
        usage: Usage::default(),
        provider: provider.to_owned(),
        latency: Duration::ZERO,
    }
}

/// Returns the last user message verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoProvider;

impl CompletionProvider for EchoProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.check()?;
        let text = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default();
        Ok(reply(text, "mock"))
    }
}

#[derive(Debug)]
enum Script {
    Sequence { responses: Vec<String>, cursor: Mutex<usize> },
    Keyed(HashMap<String, String>),
}

/// Deterministic provider replaying a fixed script.
///
/// Sequence mode returns the n-th response on the n-th call; keyed mode looks
/// the response up by [`prompt_hash`] of the request messages.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Script,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedProvider {
    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider {
            script: Script::Sequence {
                responses: responses.into_iter().map(Into::into).collect(),
                cursor: Mutex::new(0),
            },
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn keyed(map: HashMap<String, String>) -> Self {
        ScriptedProvider {
            script: Script::Keyed(map),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Loads a script file: a JSON array (sequence) or object (keyed).
    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match value {
            serde_json::Value::Array(items) => {
                let responses = items
                    .into_iter()
                    .map(|v| match v {
                        serde_json::Value::String(s) => Ok(s),
                        other => Err(format!("script entries must be strings, found {other}")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if responses.is_empty() {
                    return Err("script must not be empty".into());
                }
                Ok(Self::sequence(responses))
            }
            serde_json::Value::Object(map) => {
                let map = map
                    .into_iter()
                    .map(|(k, v)| match v {
                        serde_json::Value::String(s) => Ok((k, s)),
                        other => Err(format!("script values must be strings, found {other}")),
                    })
                    .collect::<Result<HashMap<_, _>, _>>()?;
                if map.is_empty() {
                    return Err("script must not be empty".into());
                }
                Ok(Self::keyed(map))
            }
            _ => Err("script must be a JSON array or object".into()),
        }
    }

    /// Every request received so far, in order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.check()?;
        self.calls.lock().unwrap().push(req.clone());
        let text = match &self.script {
            Script::Sequence { responses, cursor } => {
                let mut cursor = cursor.lock().unwrap();
                let text = responses.get(*cursor).cloned().ok_or(LlmError::ScriptExhausted(responses.len()))?;
                *cursor += 1;
                text
            }
            Script::Keyed(map) => {
                let key = prompt_hash(&req.messages);
                map.get(&key).cloned().ok_or(LlmError::UnknownKey(key))?
            }
        };
        Ok(reply(text, "mock"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new("mock/x", vec![Message::user(text)], 0.0, 1.0, 16)
    }

    #[test]
    fn echo_returns_user_message() {
        assert_eq!(EchoProvider.complete(&req("hi")).unwrap().text, "hi");
    }

    #[test]
    fn sequence_then_exhaustion() {
        let p = ScriptedProvider::sequence(["A", "B"]);
        assert_eq!(p.complete(&req("1")).unwrap().text, "A");
        assert_eq!(p.complete(&req("2")).unwrap().text, "B");
        assert_eq!(p.complete(&req("3")), Err(LlmError::ScriptExhausted(2)));
        assert_eq!(p.call_count(), 3);
    }

    #[test]
    fn keyed_is_order_independent() {
        let mut map = HashMap::new();
        map.insert(prompt_hash(&req("one").messages), "1".to_owned());
        map.insert(prompt_hash(&req("two").messages), "2".to_owned());
        let a = ScriptedProvider::keyed(map.clone());
        let b = ScriptedProvider::keyed(map);
        let forward = [a.complete(&req("one")).unwrap().text, a.complete(&req("two")).unwrap().text];
        let backward = [b.complete(&req("two")).unwrap().text, b.complete(&req("one")).unwrap().text];
        assert_eq!(forward, ["1", "2"]);
        assert_eq!(backward, ["2", "1"]);
        assert!(matches!(a.complete(&req("three")), Err(LlmError::UnknownKey(_))));
    }

    #[test]
    fn hash_separates_role_and_content() {
        let a = [Message::system("ab"), Message::user("c")];
        let b = [Message::system("a"), Message::user("bc")];
        assert_ne!(prompt_hash(&a), prompt_hash(&b));
        assert_eq!(prompt_hash(&a), prompt_hash(&a.clone()));
    }

    #[test]
    fn script_file_forms() {
        assert!(ScriptedProvider::from_json(r#"["a"]"#).is_ok());
        assert!(ScriptedProvider::from_json(r#"{"k":"v"}"#).is_ok());
        assert!(ScriptedProvider::from_json("[]").is_err());
        assert!(ScriptedProvider::from_json("[1]").is_err());
        assert!(ScriptedProvider::from_json("3").is_err());
    }
}
