use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::BackendError;
use crate::mock;
use crate::protocol::{parse_response, to_json, BackendRequest, BackendResponse, Health, PROTOCOL_VERSION};

/// Moves one request to a backend and brings back its response. Must be safe
/// to call from several threads at once.
pub trait Transport: Send + Sync {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).call(req)
    }
}

/// JSON over HTTP POST, one path per op.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    base: String,
    client: reqwest::blocking::Client,
    timeout: Duration,
    retries: u32,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Connection { attempts: 0, message: e.to_string() })?;
        Ok(Self { base: base_url.trim_end_matches('/').to_string(), client, timeout, retries })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<Health, BackendError> {
        let url = format!("{}/{PROTOCOL_VERSION}/health", self.base);
        let resp = self.client.get(&url).send().map_err(|e| self.classify(e, 1))?;
        let bytes = resp.bytes().map_err(|e| self.classify(e, 1))?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol(format!("malformed health response: {e}")))
    }

    fn classify(&self, e: reqwest::Error, attempts: u32) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.timeout)
        } else {
            BackendError::Connection { attempts, message: e.to_string() }
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let url = format!("{}{}", self.base, req.op().path());
        let body = to_json(req);
        let mut attempt = 0;
        loop {
            attempt += 1;
            tracing::debug!(op = %req.op(), request_id = %req.request_id, attempt, "backend call");
            let sent = self
                .client
                .post(&url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone())
                .send();
            match sent {
                Ok(resp) => {
                    let code = resp.status();
                    let bytes = resp.bytes().map_err(|e| self.classify(e, attempt))?;
                    // Error statuses still carry a protocol body when the
                    // backend is well behaved.
                    return parse_response(&bytes).map_err(|e| match e {
                        BackendError::Protocol(m) if !code.is_success() => {
                            BackendError::Protocol(format!("HTTP {code}: {m}"))
                        }
                        other => other,
                    });
                }
                Err(e) if e.is_connect() && attempt <= self.retries => {
                    tracing::warn!(op = %req.op(), attempt, "connection failed, retrying: {e}");
                }
                Err(e) => return Err(self.classify(e, attempt)),
            }
        }
    }
}

/// Serves requests in process with the mock backends.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTransport;

impl Transport for MockTransport {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Ok(mock::handle(req))
    }
}

/// Wraps a closure; handy for scripted backends in tests.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&BackendRequest) -> Result<BackendResponse, BackendError> + Send + Sync,
{
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (self.0)(req)
    }
}

/// Records every request before forwarding it.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<BackendRequest>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<BackendRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn call(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.log.lock().expect("log lock").push(req.clone());
        self.inner.call(req)
    }
}
