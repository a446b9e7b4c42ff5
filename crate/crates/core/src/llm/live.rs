use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limiter::{ConcurrencyGate, RateLimiter};
use super::replay::TranscriptWriter;
use super::{Backend, CompletionRequest, CompletionResult, LlmError};
use crate::docmodel::SharedCounter;

/// Field mapping between the generic messages-style request and a
/// provider's JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireFormat {
    pub auth_header: String,
    /// Prepended to the API key in the auth header.
    pub auth_prefix: String,
    pub extra_headers: BTreeMap<String, String>,
    pub max_tokens_field: String,
    /// JSON pointers into the response body.
    pub text_pointer: String,
    pub input_tokens_pointer: String,
    pub output_tokens_pointer: String,
}

impl Default for WireFormat {
    fn default() -> Self {
        Self {
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            extra_headers: BTreeMap::new(),
            max_tokens_field: "max_tokens".into(),
            text_pointer: "/choices/0/message/content".into(),
            input_tokens_pointer: "/usage/prompt_tokens".into(),
            output_tokens_pointer: "/usage/completion_tokens".into(),
        }
    }
}

impl WireFormat {
    pub fn request_body(&self, request: &CompletionRequest) -> String {
        let mut body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        body[self.max_tokens_field.as_str()] = json!(request.max_output_tokens);
        body.to_string()
    }

    /// Extracts text and provider token counts from a success body.
    pub fn parse_response(&self, body: &str) -> Result<(String, Option<usize>, Option<usize>), LlmError> {
        let value: Value = serde_json::from_str(body).map_err(|e| LlmError::Backend {
            retryable: false,
            status: None,
            message: format!("response is not JSON: {e}"),
        })?;
        let text = value.pointer(&self.text_pointer).and_then(Value::as_str).ok_or_else(|| LlmError::Backend {
            retryable: false,
            status: None,
            message: format!("response has no text at {}", self.text_pointer),
        })?;
        let usage = |pointer: &str| value.pointer(pointer).and_then(Value::as_u64).map(|n| n as usize);
        Ok((text.to_owned(), usage(&self.input_tokens_pointer), usage(&self.output_tokens_pointer)))
    }
}

/// Live backend configuration. API keys are only read from the environment
/// variable it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub provider: String,
    /// Full endpoint URL.
    pub base_url: String,
    pub model: String,
    pub api_key_env_var: String,
    #[serde(default = "defaults::max_concurrency")]
    pub max_concurrency: usize,
    /// Requests per minute; 0 disables the budget.
    #[serde(default)]
    pub rpm: usize,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "defaults::backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "defaults::backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default)]
    pub wire: WireFormat,
}

mod defaults {
    pub fn max_concurrency() -> usize {
        4
    }
    pub fn max_retries() -> u32 {
        5
    }
    pub fn timeout_secs() -> u64 {
        300
    }
    pub fn backoff_base_ms() -> u64 {
        1_000
    }
    pub fn backoff_max_ms() -> u64 {
        60_000
    }
}

impl BackendConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, LlmError> {
        if json {
            serde_json::from_str(text).map_err(|e| LlmError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| LlmError::Config(e.to_string()))
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(20));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    /// Connection-level failure worth retrying.
    Connection(String),
    /// Failure that no retry can fix.
    Fatal(String),
}

/// Sends one HTTP POST.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

/// Blocking `reqwest` transport.
#[derive(Debug, Default)]
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl Transport for ReqwestTransport {
    fn send(&self, request: &HttpRequest, timeout: Duration) -> Result<HttpResponse, TransportError> {
        let mut builder = self.client.post(&request.url).timeout(timeout).header("content-type", "application/json");
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        let response = builder.body(request.body.clone()).send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// HTTP completion client enforcing retries and shared rate limits.
pub struct LiveClient<T: Transport> {
    config: BackendConfig,
    transport: T,
    api_key: String,
    counter: SharedCounter,
    gate: ConcurrencyGate,
    limiter: RateLimiter,
    transcript: Option<TranscriptWriter>,
}

impl<T: Transport> std::fmt::Debug for LiveClient<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveClient").field("provider", &self.config.provider).field("model", &self.config.model).finish()
    }
}

impl LiveClient<ReqwestTransport> {
    /// Client over HTTP, reading the key from the configured variable.
    pub fn from_env(config: BackendConfig, counter: SharedCounter) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env_var)
            .map_err(|_| LlmError::Config(format!("environment variable {} is not set", config.api_key_env_var)))?;
        Ok(Self::with_transport(config, ReqwestTransport::default(), key, counter))
    }
}

impl<T: Transport> LiveClient<T> {
    pub fn with_transport(config: BackendConfig, transport: T, api_key: String, counter: SharedCounter) -> Self {
        let gate = ConcurrencyGate::new(config.max_concurrency);
        let limiter = RateLimiter::per_minute(config.rpm);
        Self { config, transport, api_key, counter, gate, limiter, transcript: None }
    }

    /// Logs every raw request and response body.
    pub fn with_transcript(mut self, writer: TranscriptWriter) -> Self {
        self.transcript = Some(writer);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn http_request(&self, body: String) -> HttpRequest {
        let wire = &self.config.wire;
        let mut headers = vec![(wire.auth_header.clone(), format!("{}{}", wire.auth_prefix, self.api_key))];
        headers.extend(wire.extra_headers.iter().map(|(k, v)| (k.clone(), v.clone())));
        HttpRequest { url: self.config.base_url.clone(), headers, body }
    }
}

enum Failure {
    RateLimited,
    Timeout,
    Other(String, Option<u16>),
}

impl<T: Transport> Backend for LiveClient<T> {
    fn name(&self) -> &str {
        &self.config.provider
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let body = self.config.wire.request_body(request);
        let http = self.http_request(body);
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let started = Instant::now();
        let attempts_allowed = self.config.max_retries + 1;
        let mut last = Failure::Other("no attempt made".into(), None);

        for attempt in 1..=attempts_allowed {
            self.limiter.acquire();
            let outcome = {
                let _permit = self.gate.acquire();
                self.transport.send(&http, timeout)
            };
            match outcome {
                Ok(response) => {
                    if let Some(log) = &self.transcript {
                        log.record(&http.body, &response);
                    }
                    match response.status {
                        200..=299 => {
                            let (text, input, output) = self.config.wire.parse_response(&response.body)?;
                            return Ok(CompletionResult {
                                input_tokens: input.unwrap_or_else(|| self.counter.count(&request.prompt)),
                                output_tokens: output.unwrap_or_else(|| self.counter.count(&text)),
                                text,
                                latency: started.elapsed(),
                                attempts: attempt,
                            });
                        }
                        429 => last = Failure::RateLimited,
                        408 | 500..=599 => last = Failure::Other(response.body, Some(response.status)),
                        status => {
                            return Err(LlmError::Backend { retryable: false, status: Some(status), message: response.body });
                        }
                    }
                }
                Err(TransportError::Timeout) => last = Failure::Timeout,
                Err(TransportError::Connection(message)) => last = Failure::Other(message, None),
                Err(TransportError::Fatal(message)) => {
                    return Err(LlmError::Backend { retryable: false, status: None, message });
                }
            }
            if attempt < attempts_allowed {
                let delay = self.config.backoff(attempt);
                debug!("attempt {attempt} failed, retrying in {delay:?}");
                std::thread::sleep(delay);
            }
        }

        warn!("giving up after {attempts_allowed} attempts");
        Err(match last {
            Failure::RateLimited => LlmError::RateLimitExhausted { attempts: attempts_allowed },
            Failure::Timeout => LlmError::Timeout { attempts: attempts_allowed },
            Failure::Other(message, status) => LlmError::Backend { retryable: true, status, message },
        })
    }
}
