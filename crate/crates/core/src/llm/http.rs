use std::sync::OnceLock;
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Minimal blocking JSON POST, swappable for capturing fakes in tests.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

/// Blocking reqwest client, built on first use.
///
/// The blocking client owns an internal runtime that must not be created or
/// dropped on an async executor thread, so construction is deferred to the
/// calling (worker) thread and the drop is moved to a plain thread.
pub struct ReqwestTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        ReqwestTransport {
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(reqwest::blocking::Client::new)
    }
}

impl Drop for ReqwestTransport {
    fn drop(&mut self) {
        if let Some(client) = self.client.take() {
            let _ = std::thread::spawn(move || drop(client)).join();
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let mut req = self.client().post(url).timeout(timeout).json(body);
        for (k, v) in headers {
            req = req.header(k, v);
        }
        // Errors from reqwest include the URL only, never headers.
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}
