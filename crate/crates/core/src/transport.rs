//! Blocking JSON-over-HTTP plumbing shared by the remote embedder and the
//! remote chat backend. Tests substitute a closure-backed transport.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value>;
}

/// reqwest-backed transport. The client is built on first use so the
/// transport can be constructed inside an async runtime and used from a
/// blocking task.
#[derive(Default)]
pub struct HttpTransport {
    client: OnceLock<reqwest::blocking::Client>,
    timeout: Option<Duration>,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        Self {
            client: OnceLock::new(),
            timeout: Some(timeout),
        }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            let mut builder = reqwest::blocking::Client::builder();
            if let Some(t) = self.timeout {
                builder = builder.timeout(t);
            }
            builder.build().expect("http client")
        })
    }

    pub fn get_bytes(&self, url: &str) -> Result<Vec<u8>> {
        let resp = self
            .client()
            .get(url)
            .send()
            .map_err(|e| Error::TransportError(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::TransportError(format!("GET {url}: {}", resp.status())));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| Error::TransportError(e.to_string()))
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value> {
        let mut req = self.client().post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Error::TransportError(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Error::TransportError(e.to_string()))?;
        if !status.is_success() {
            if status.as_u16() == 400 && text.contains("context_length") {
                return Err(Error::ContextOverflow(text));
            }
            return Err(Error::TransportError(format!("POST {url}: {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| Error::TransportError(format!("bad json: {e}")))
    }
}

/// Transport backed by a closure; used to mock remote services.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&str, &Value) -> Result<Value> + Send + Sync,
{
    fn post_json(&self, url: &str, _bearer: Option<&str>, body: &Value) -> Result<Value> {
        (self.0)(url, body)
    }
}
