//! Minimal blocking JSON-over-HTTP transport.
//!
//! Everything that talks to the network goes through [`HttpTransport`], so
//! tests can substitute a recording fake and assert that no request left
//! the process.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("request to {url} failed: {message}")]
    Connect { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// [`HttpTransport`] backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(timeout))
            .build();
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout {
                url: url.to_string(),
            },
            other => TransportError::Connect {
                url: url.to_string(),
                message: other.to_string(),
            },
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connect {
                url: url.to_string(),
                message: e.to_string(),
            })?;
        Ok(HttpResponse { status, body })
    }
}

/// `(url, headers, body)` per request.
pub type RequestLog = Vec<(String, Vec<(String, String)>, Value)>;

/// Scripted transport for tests: replies with a fixed function of the
/// request and counts calls.
pub struct FakeTransport<F> {
    reply: F,
    calls: AtomicUsize,
    requests: Mutex<RequestLog>,
}

impl<F> FakeTransport<F>
where
    F: Fn(&str, &Value) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    pub fn new(reply: F) -> Self {
        Self {
            reply,
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// `(url, headers, body)` of every request so far.
    pub fn requests(&self) -> RequestLog {
        self.requests.lock().expect("request log poisoned").clone()
    }
}

impl<F> HttpTransport for FakeTransport<F>
where
    F: Fn(&str, &Value) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().expect("request log poisoned").push((
            url.to_string(),
            headers.to_vec(),
            body.clone(),
        ));
        (self.reply)(url, body)
    }
}
