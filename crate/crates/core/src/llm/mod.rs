//! Completion backends.
//!
//! Everything that talks to a model goes through [`Backend`]. Three families
//! exist:
//!
//! - [`LiveClient`]: HTTP completion client with retries, a concurrency cap
//!   and a requests-per-minute budget, generic over its [`Transport`].
//! - [`SimulatorBackend`]: a deterministic model whose accuracy depends only on
//!   the token distance between relevant pages and the nearest copy of the
//!   instructions.
//! - [`EchoBackend`] / [`ScriptedBackend`]: canned responses for tests.
//!
//! Transcripts written by a live client can be served again byte for byte by
//! [`ReplayTransport`].

mod limiter;
mod live;
mod mock;
mod replay;
mod simulator;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use limiter::{ConcurrencyGate, RateLimiter};
pub use live::{BackendConfig, HttpRequest, HttpResponse, LiveClient, ReqwestTransport, Transport, TransportError, WireFormat};
pub use mock::{EchoBackend, ScriptedBackend, ECHO_FIXTURE};
pub use replay::{ReplayTransport, TranscriptEntry, TranscriptWriter};
pub use simulator::{simulate_completion, BiasModel, PromptAnatomy, SimulatorBackend, TaskKind, TruthSidecar, WrongAnswerPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { retryable: bool, status: Option<u16>, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimitExhausted { attempts: u32 },
    #[error("unparseable prompt: {0}")]
    UnparseablePrompt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Errors that make further calls to the same backend pointless.
    pub fn is_fatal(&self) -> bool {
        matches!(self, LlmError::Backend { retryable: false, .. } | LlmError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
    /// Sample the prompt belongs to. Never sent to a provider; lets offline
    /// backends look up ground truth out of band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), model: model.into(), max_output_tokens: 512, temperature: 0.0, sample_id: None }
    }

    pub fn for_sample(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: usize,
    pub output_tokens: usize,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub attempts: u32,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// A model endpoint.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

pub type SharedBackend = Arc<dyn Backend>;

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

/// Runs a request against a backend after validating it.
pub fn complete(backend: &dyn Backend, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
    request.validate()?;
    backend.complete(request)
}
