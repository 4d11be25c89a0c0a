use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::{HttpTransport, TransportError};
use crate::prompt::ChatMessage;

/// One single-sample completion request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    pub sample_index: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: rate limits, server errors, timeouts.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
    /// Credentials or endpoint are wrong; retrying will not help.
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// OpenAI-compatible `chat/completions` over an [`HttpTransport`].
pub struct OpenAiBackend {
    transport: Arc<dyn HttpTransport>,
    url: String,
    api_key: Option<String>,
    timeout: Duration,
}

impl OpenAiBackend {
    /// `endpoint` is either the full completions URL or an API base such as
    /// `https://api.openai.com/v1`.
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        Self {
            transport,
            url,
            api_key,
            timeout,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let resp = self
            .transport
            .post_json(&self.url, &headers, &body, self.timeout)
            .map_err(|e| match e {
                TransportError::Timeout { .. } | TransportError::Connect { .. } => {
                    BackendError::Transient(e.to_string())
                }
            })?;
        let snippet = || resp.body.chars().take(300).collect::<String>();
        match resp.status {
            200..=299 => {}
            401 | 403 => {
                return Err(BackendError::Config(format!(
                    "HTTP {}: {}",
                    resp.status,
                    snippet()
                )))
            }
            408 | 409 | 429 | 500..=599 => {
                return Err(BackendError::Transient(format!(
                    "HTTP {}: {}",
                    resp.status,
                    snippet()
                )))
            }
            s => return Err(BackendError::Fatal(format!("HTTP {s}: {}", snippet()))),
        }
        let v: Value = serde_json::from_str(&resp.body)
            .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::Fatal(format!("no choices[0].message.content in {}", snippet()))
            })
    }
}

/// One scripted reply. All present conditions must hold.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Substring of the last message.
    #[serde(default)]
    pub last_contains: Option<String>,
    /// Substring of any message.
    #[serde(default)]
    pub any_contains: Option<String>,
    #[serde(default)]
    pub sample_index: Option<usize>,
    #[serde(default)]
    pub response: String,
    /// `"transient"` or `"fatal"` to simulate a failure instead.
    #[serde(default)]
    pub error: Option<String>,
}

impl MockRule {
    fn matches(&self, r: &ChatRequest) -> bool {
        let last_ok = self.last_contains.as_ref().is_none_or(|needle| {
            r.messages
                .last()
                .is_some_and(|m| m.content.contains(needle.as_str()))
        });
        let any_ok = self.any_contains.as_ref().is_none_or(|needle| {
            r.messages
                .iter()
                .any(|m| m.content.contains(needle.as_str()))
        });
        let idx_ok = self.sample_index.is_none_or(|i| i == r.sample_index);
        last_ok && any_ok && idx_ok
    }
}

/// Mock script file: first matching rule wins, else `default`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default = "empty_answer")]
    pub default: String,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

fn empty_answer() -> String {
    "[]".into()
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            default: empty_answer(),
            rules: Vec::new(),
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn reply(&self, r: &ChatRequest) -> Result<String, BackendError> {
        match self.rules.iter().find(|rule| rule.matches(r)) {
            Some(rule) => match rule.error.as_deref() {
                None => Ok(rule.response.clone()),
                Some("transient") => Err(BackendError::Transient("scripted".into())),
                Some(_) => Err(BackendError::Fatal("scripted".into())),
            },
            None => Ok(self.default.clone()),
        }
    }
}

type Reply = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Deterministic offline backend. Counts calls and logs requests.
pub struct MockBackend {
    reply: Box<Reply>,
    calls: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn from_fn(
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            reply: Box::new(f),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_script(script: MockScript) -> Self {
        Self::from_fn(move |r| script.reply(r))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(request.clone());
        (self.reply)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{FakeTransport, HttpResponse};

    fn req(text: &str, i: usize) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user("preamble"), ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 16,
            model_name: "m".into(),
            sample_index: i,
        }
    }

    #[test]
    fn script_rules_in_order() {
        let script: MockScript = serde_json::from_str(
            r#"{"default": "[]", "rules": [
                {"last_contains": "Person", "sample_index": 1, "response": "one"},
                {"last_contains": "Person", "response": "any"},
                {"any_contains": "boom", "error": "transient"}
            ]}"#,
        )
        .unwrap();
        let m = MockBackend::from_script(script);
        assert_eq!(m.complete(&req("Person?", 0)).unwrap(), "any");
        assert_eq!(m.complete(&req("Person?", 1)).unwrap(), "one");
        assert_eq!(m.complete(&req("Place?", 1)).unwrap(), "[]");
        assert!(matches!(
            m.complete(&req("boom", 0)),
            Err(BackendError::Transient(_))
        ));
        assert_eq!(m.calls(), 4);
    }

    #[test]
    fn openai_wire_format_and_status_mapping() {
        let t = Arc::new(FakeTransport::new(|url: &str, body: &Value| {
            assert!(url.ends_with("/v1/chat/completions"));
            assert_eq!(body["messages"][1]["role"], "user");
            let status = if body["messages"][1]["content"] == "slow" {
                503
            } else {
                200
            };
            Ok(HttpResponse {
                status,
                body: r#"{"choices":[{"message":{"role":"assistant","content":"[]"}}]}"#.into(),
            })
        }));
        let b = OpenAiBackend::new(
            t.clone(),
            "http://h/v1/",
            Some("k".into()),
            Duration::from_secs(1),
        );
        assert_eq!(b.complete(&req("hi", 0)).unwrap(), "[]");
        assert!(matches!(
            b.complete(&req("slow", 0)),
            Err(BackendError::Transient(_))
        ));
        let sent = t.requests();
        assert!(sent[0]
            .1
            .iter()
            .any(|(k, v)| k == "Authorization" && v == "Bearer k"));
    }
}
