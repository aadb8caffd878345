//! Transports that carry a request to the service under test.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::HttpRequest;
use crate::registry::Registry;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportErrorKind {
    Timeout,
    ConnectionRefused,
    Other,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("transport failure: {0}")]
    Other(String),
}

impl TransportError {
    pub fn kind(&self) -> TransportErrorKind {
        match self {
            TransportError::Timeout(_) => TransportErrorKind::Timeout,
            TransportError::ConnectionRefused(_) => TransportErrorKind::ConnectionRefused,
            TransportError::Other(_) => TransportErrorKind::Other,
        }
    }
}

pub trait Transport: Send {
    fn send(&mut self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Outcome of one dispatch: either a status or a transport error marker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseRecord {
    pub status: Option<u16>,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub latency: Duration,
    pub transport_error: Option<TransportErrorKind>,
}

impl ResponseRecord {
    pub fn is_success(&self) -> bool {
        self.status.is_some_and(|s| (200..300).contains(&s))
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency.as_secs_f64() * 1000.0
    }
}

pub fn dispatch(transport: &mut dyn Transport, request: &HttpRequest) -> ResponseRecord {
    match transport.send(request) {
        Ok(r) => ResponseRecord {
            status: Some(r.status),
            headers: r.headers,
            body: r.body,
            latency: r.latency,
            transport_error: None,
        },
        Err(e) => {
            tracing::warn!(error = %e, path = %request.path, "transport error");
            let latency = match &e {
                TransportError::Timeout(d) => *d,
                _ => Duration::ZERO,
            };
            ResponseRecord {
                status: None,
                headers: Vec::new(),
                body: e.to_string(),
                latency,
                transport_error: Some(e.kind()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra header sent with every request, e.g. a static credential.
    pub auth_header: Option<(String, String)>,
}

impl TransportConfig {
    pub fn new(base_url: &str) -> Self {
        TransportConfig {
            base_url: base_url.to_string(),
            timeout: DEFAULT_TIMEOUT,
            auth_header: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportSetupError {
    #[error("base URL `{0}` is not a valid URL")]
    InvalidUrl(String),
    #[error("no transport registered for scheme `{0}`")]
    UnknownScheme(String),
    #[error("transport setup failed: {0}")]
    Setup(String),
}

pub type TransportFactory =
    Box<dyn Fn(&TransportConfig) -> Result<Box<dyn Transport>, TransportSetupError> + Send + Sync>;

/// Transports keyed by URL scheme.
pub type TransportRegistry = Registry<TransportFactory>;

/// Registry with `http` and `https` backed by [`HttpTransport`].
pub fn default_transports() -> TransportRegistry {
    let mut r = TransportRegistry::new();
    for scheme in ["http", "https"] {
        r.register(
            scheme,
            Box::new(|c: &TransportConfig| {
                HttpTransport::new(c).map(|t| Box::new(t) as Box<dyn Transport>)
            }),
        );
    }
    r
}

pub fn open_transport(
    registry: &TransportRegistry,
    config: &TransportConfig,
) -> Result<Box<dyn Transport>, TransportSetupError> {
    let url = url::Url::parse(&config.base_url)
        .map_err(|_| TransportSetupError::InvalidUrl(config.base_url.clone()))?;
    let factory = registry
        .get(url.scheme())
        .ok_or_else(|| TransportSetupError::UnknownScheme(url.scheme().to_string()))?;
    factory(config)
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    timeout: Duration,
    auth_header: Option<(String, String)>,
}

impl HttpTransport {
    pub fn new(config: &TransportConfig) -> Result<Self, TransportSetupError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .map_err(|e| TransportSetupError::Setup(e.to_string()))?;
        Ok(HttpTransport {
            client,
            base_url: config.base_url.clone(),
            timeout: config.timeout,
            auth_header: config.auth_header.clone(),
        })
    }
}

impl Transport for HttpTransport {
    fn send(&mut self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let method = reqwest::Method::from_bytes(request.method.as_str().as_bytes())
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let mut builder = self.client.request(method, request.url(&self.base_url));
        if let Some((k, v)) = &self.auth_header {
            builder = builder.header(k, v);
        }
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        let started = Instant::now();
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout(self.timeout)
            } else if e.is_connect() {
                TransportError::ConnectionRefused(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        };
        let resp = builder.send().map_err(classify)?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| {
                (
                    k.to_string(),
                    String::from_utf8_lossy(v.as_bytes()).into_owned(),
                )
            })
            .collect();
        let body = resp.text().map_err(classify)?;
        Ok(HttpResponse {
            status,
            headers,
            body,
            latency: started.elapsed(),
        })
    }
}
