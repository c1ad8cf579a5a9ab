use std::time::Duration;

use serde_json::Value;

use super::{EndpointConfig, Route};

/// One attempt failed. `Status` carries the HTTP code so the client can tell
/// terminal 4xx answers from retryable 5xx ones.
#[derive(Clone, Debug, PartialEq)]
pub enum TransportFailure {
    Connection(String),
    /// Non-2xx answer. `structured` is true when the body carried the
    /// protocol's `{"error": s}` shape.
    Status {
        code: u16,
        message: String,
        structured: bool,
    },
    Malformed(String),
}

impl TransportFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportFailure::Connection(_) => true,
            TransportFailure::Status { code, .. } => *code >= 500,
            TransportFailure::Malformed(_) => false,
        }
    }

    pub fn message(&self) -> String {
        match self {
            TransportFailure::Connection(m) => format!("connection: {m}"),
            TransportFailure::Status { code, message, .. } => format!("HTTP {code}: {message}"),
            TransportFailure::Malformed(m) => format!("malformed response: {m}"),
        }
    }
}

/// Carries one JSON request to a backend and returns its JSON response.
pub trait Transport: Send + Sync {
    fn post(&self, route: Route, body: &Value) -> Result<Value, TransportFailure>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base_url: config.base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, route: Route, body: &Value) -> Result<Value, TransportFailure> {
        let url = format!("{}{}", self.base_url, route.path());
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| TransportFailure::Connection(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Connection(e.to_string()))?;
        if !(200..300).contains(&code) {
            let error_field = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string));
            let structured = error_field.is_some();
            return Err(TransportFailure::Status {
                code,
                message: error_field.unwrap_or(text),
                structured,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportFailure::Malformed(e.to_string()))
    }
}
