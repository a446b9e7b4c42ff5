use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use super::{Backend, CompletionRequest, CompletionResult, LlmError};

/// Default text returned by [`EchoBackend`].
pub const ECHO_FIXTURE: &str = r#"{"question": "Which fixture phrase does the echo backend return?", "answer": "echo fixture"}"#;

/// Returns the same text for every request.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    text: String,
}

impl EchoBackend {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl Default for EchoBackend {
    fn default() -> Self {
        Self::new(ECHO_FIXTURE)
    }
}

impl Backend for EchoBackend {
    fn name(&self) -> &str {
        "echo"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        Ok(CompletionResult {
            text: self.text.clone(),
            input_tokens: request.prompt.split_whitespace().count(),
            output_tokens: self.text.split_whitespace().count(),
            latency: Duration::ZERO,
            attempts: 1,
        })
    }
}

/// Serves queued outcomes in order, then repeats the last one.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, LlmError>>>,
    last: Mutex<Option<Result<String, LlmError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        Self { script: Mutex::new(script.into_iter().collect()), last: Mutex::new(None), prompts: Mutex::new(Vec::new()) }
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        self.prompts.lock().expect("prompt log poisoned").push(request.prompt.clone());
        let next = self.script.lock().expect("script poisoned").pop_front();
        let outcome = match next {
            Some(outcome) => {
                *self.last.lock().expect("script poisoned") = Some(outcome.clone());
                outcome
            }
            None => self
                .last
                .lock()
                .expect("script poisoned")
                .clone()
                .unwrap_or_else(|| Err(LlmError::Config("empty script".into()))),
        };
        outcome.map(|text| CompletionResult {
            output_tokens: text.split_whitespace().count(),
            input_tokens: request.prompt.split_whitespace().count(),
            text,
            latency: Duration::ZERO,
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_fixture() {
        let r = EchoBackend::default().complete(&CompletionRequest::new("anything", "m")).unwrap();
        assert_eq!(r.text, ECHO_FIXTURE);
    }

    #[test]
    fn script_plays_in_order_then_repeats() {
        let b = ScriptedBackend::new([Ok("a".to_string()), Err(LlmError::Timeout { attempts: 1 }), Ok("c".to_string())]);
        let req = CompletionRequest::new("p", "m");
        assert_eq!(b.complete(&req).unwrap().text, "a");
        assert!(b.complete(&req).is_err());
        assert_eq!(b.complete(&req).unwrap().text, "c");
        assert_eq!(b.complete(&req).unwrap().text, "c");
        assert_eq!(b.prompts().len(), 4);
    }
}
