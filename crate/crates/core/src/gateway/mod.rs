//! Cached chat completions. Live backends get retries and an optional rate limit.
//!
//! Every sample is its own request, identified by a digest of the messages,
//! sampling parameters, and sample index. Responses are recorded before they
//! are returned, so an interrupted run loses nothing it paid for.

mod backend;
mod ratelimit;
mod store;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::ChatMessage;

pub use backend::{
    BackendError, ChatBackend, ChatRequest, MockBackend, MockRule, MockScript, OpenAiBackend,
};
pub use ratelimit::{Clock, RateLimiter, SimClock, SystemClock};
pub use store::{RawResponseRecord, RecordStore};

pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_RETRY_MAX: u32 = 5;
pub const SC_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: u32,
    pub model_name: String,
}

impl CompletionParams {
    /// Greedy single sample without self-consistency, `n` samples at 0.7 with it.
    pub fn defaults(model_name: &str, self_consistency: Option<usize>) -> Self {
        let (temperature, n_samples) = match self_consistency {
            Some(n) => (SC_TEMPERATURE, n),
            None => (0.0, 1),
        };
        Self {
            temperature,
            n_samples,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_name: model_name.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.n_samples == 0 || self.max_tokens == 0 {
            return Err(GatewayError::Config(
                "n_samples and max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn request(&self, messages: &[ChatMessage], sample_index: usize) -> ChatRequest {
        ChatRequest {
            messages: messages.to_vec(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model_name: self.model_name.clone(),
            sample_index,
        }
    }
}

/// Hex SHA-256 of the request's canonical JSON. Depends on nothing but the
/// messages, temperature, max_tokens, model name, and sample index.
pub fn request_digest(request: &ChatRequest) -> String {
    let canonical = serde_json::to_vec(request).expect("request serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{} request(s) missing from the response store: {}", .digests.len(), .digests.join(", "))]
    CacheMiss { digests: Vec<String> },
    #[error("{message} (after {attempts} attempt(s))")]
    Backend { message: String, attempts: u32 },
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("response store: {0}")]
    Store(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GatewayStats {
    pub backend_calls: usize,
    pub cache_hits: usize,
    pub retries: usize,
}

pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    store: RecordStore,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
    retry_max: u32,
    backoff_base: Duration,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    retries: AtomicUsize,
}

impl Gateway {
    /// Cache-first access to `backend`, recording every new response.
    pub fn new(backend: Arc<dyn ChatBackend>, store: RecordStore) -> Self {
        Self::build(Some(backend), store)
    }

    /// Serve only recorded responses.
    pub fn replay(store: RecordStore) -> Self {
        Self::build(None, store)
    }

    fn build(backend: Option<Arc<dyn ChatBackend>>, store: RecordStore) -> Self {
        Self {
            backend,
            store,
            limiter: None,
            clock: Arc::new(SystemClock::new()),
            retry_max: DEFAULT_RETRY_MAX,
            backoff_base: Duration::from_secs(1),
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            retries: AtomicUsize::new(0),
        }
    }

    pub fn with_rate_limit(mut self, rpm_ceiling: f64) -> Self {
        self.limiter = Some(RateLimiter::per_minute(rpm_ceiling));
        self
    }

    pub fn with_retries(mut self, retry_max: u32, backoff_base: Duration) -> Self {
        self.retry_max = retry_max;
        self.backoff_base = backoff_base;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }

    /// `params.n_samples` responses in sample-index order.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<Vec<String>, GatewayError> {
        params.validate()?;
        if self.backend.is_none() {
            let requests: Vec<ChatRequest> = (0..params.n_samples)
                .map(|i| params.request(messages, i))
                .collect();
            let missing: Vec<String> = requests
                .iter()
                .map(request_digest)
                .filter(|d| self.store.get(d).is_none())
                .collect();
            if !missing.is_empty() {
                return Err(GatewayError::CacheMiss { digests: missing });
            }
        }
        (0..params.n_samples)
            .map(|i| self.complete_one(&params.request(messages, i)))
            .collect()
    }

    pub fn complete_one(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let digest = request_digest(request);
        if let Some(text) = self.store.get(&digest) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text);
        }
        let Some(backend) = &self.backend else {
            return Err(GatewayError::CacheMiss {
                digests: vec![digest],
            });
        };
        let mut attempt = 0u32;
        let text = loop {
            attempt += 1;
            if let Some(l) = &self.limiter {
                l.acquire(self.clock.as_ref());
            }
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match backend.complete(request) {
                Ok(text) => break text,
                Err(BackendError::Transient(m)) if attempt <= self.retry_max => {
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    let wait = self
                        .backoff_base
                        .saturating_mul(1 << (attempt - 1).min(16))
                        .min(Duration::from_secs(120));
                    log::warn!("transient backend failure ({m}); retry {attempt} in {wait:?}");
                    self.clock.sleep(wait);
                }
                Err(BackendError::Config(m)) => return Err(GatewayError::Config(m)),
                Err(e) => {
                    return Err(GatewayError::Backend {
                        message: e.to_string(),
                        attempts: attempt,
                    })
                }
            }
        };
        self.store.append(&RawResponseRecord {
            request_digest: digest,
            messages: request.messages.clone(),
            response_text: text.clone(),
            model_name: request.model_name.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            sample_index: request.sample_index,
        })?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn msgs(q: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::user(q)]
    }

    fn store(dir: &tempfile::TempDir) -> RecordStore {
        RecordStore::open(&dir.path().join("raw_responses.jsonl")).unwrap()
    }

    #[test]
    fn digest_tracks_only_request_content() {
        let p = CompletionParams::defaults("m", None);
        let base = request_digest(&p.request(&msgs("q"), 0));
        let mut other_n = p.clone();
        other_n.n_samples = 9;
        assert_eq!(base, request_digest(&other_n.request(&msgs("q"), 0)));
        let mut hot = p.clone();
        hot.temperature = 0.7;
        assert_ne!(base, request_digest(&hot.request(&msgs("q"), 0)));
        assert_ne!(base, request_digest(&p.request(&msgs("q2"), 0)));
        assert_ne!(base, request_digest(&p.request(&msgs("q"), 1)));
        assert_eq!(base.len(), 64);
    }

    #[test]
    fn samples_in_index_order_then_cached() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::from_fn(|r| Ok(format!("s{}", r.sample_index))));
        let gw = Gateway::new(mock.clone(), store(&dir));
        let p = CompletionParams::defaults("m", Some(5));
        let out = gw.complete(&msgs("q"), &p).unwrap();
        assert_eq!(out, vec!["s0", "s1", "s2", "s3", "s4"]);
        assert_eq!(gw.complete(&msgs("q"), &p).unwrap(), out);
        assert_eq!(mock.calls(), 5);
        assert_eq!(gw.stats().cache_hits, 5);

        let replay = Gateway::replay(store(&dir));
        assert_eq!(replay.complete(&msgs("q"), &p).unwrap(), out);
        match replay.complete(&msgs("other"), &p) {
            Err(GatewayError::CacheMiss { digests }) => assert_eq!(digests.len(), 5),
            other => panic!("expected cache miss, got {other:?}"),
        }
    }

    #[test]
    fn transient_failures_back_off_then_give_up() {
        let dir = tempfile::tempdir().unwrap();
        let failures = Arc::new(AtomicU32::new(2));
        let f = failures.clone();
        let mock = Arc::new(MockBackend::from_fn(move |_| {
            if f.load(Ordering::SeqCst) > 0 {
                f.fetch_sub(1, Ordering::SeqCst);
                Err(BackendError::Transient("429".into()))
            } else {
                Ok("[]".into())
            }
        }));
        let clock = Arc::new(SimClock::new());
        let gw = Gateway::new(mock.clone(), store(&dir))
            .with_retries(5, Duration::from_secs(1))
            .with_clock(clock.clone());
        assert_eq!(
            gw.complete_one(&CompletionParams::defaults("m", None).request(&msgs("q"), 0))
                .unwrap(),
            "[]"
        );
        assert_eq!(mock.calls(), 3);
        assert_eq!(clock.total_slept(), Duration::from_secs(3));

        let always = Arc::new(MockBackend::from_fn(|_| {
            Err(BackendError::Transient("down".into()))
        }));
        let gw = Gateway::new(always.clone(), store(&dir))
            .with_retries(2, Duration::from_millis(1))
            .with_clock(Arc::new(SimClock::new()));
        let err = gw
            .complete_one(&CompletionParams::defaults("m", None).request(&msgs("x"), 0))
            .unwrap_err();
        assert!(matches!(err, GatewayError::Backend { attempts: 3, .. }));
        assert_eq!(always.calls(), 3);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::from_fn(|_| {
            Err(BackendError::Config("401".into()))
        }));
        let gw = Gateway::new(mock.clone(), store(&dir));
        let err = gw
            .complete(&msgs("q"), &CompletionParams::defaults("m", None))
            .unwrap_err();
        assert!(matches!(err, GatewayError::Config(_)));
        assert_eq!(mock.calls(), 1);
    }
}
