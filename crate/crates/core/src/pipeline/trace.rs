use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Method, PipelineError};

/// Bumped whenever the trace layout changes.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Retrieval,
    Qa,
    Probe,
}

/// One model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub phase: Phase,
    /// Chunk index for chunked retrieval calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
    pub prompt_sha256: String,
    /// Full prompt text, kept only when prompt recording is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set when the error makes further calls to the backend pointless.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fatal: bool,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl CallRecord {
    pub(crate) fn new(phase: Phase, chunk: Option<usize>, prompt: &str, keep_prompt: bool) -> Self {
        Self {
            phase,
            chunk,
            prompt_sha256: hex::encode(Sha256::digest(prompt.as_bytes())),
            prompt: keep_prompt.then(|| prompt.to_owned()),
            response: None,
            error: None,
            fatal: false,
            input_tokens: 0,
            output_tokens: 0,
            latency_ms: 0,
            attempts: 0,
        }
    }

    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    /// Every phase produced a parseable response.
    Ok,
    /// The final response did not match its schema.
    Malformed,
    /// A call failed or the prompt could not be built.
    Failed,
}

/// Everything recorded while answering one sample with one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub schema_version: u32,
    pub sample_id: String,
    pub method: Method,
    /// Configuration label, unique per method settings.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    pub calls: Vec<CallRecord>,
    /// Reminder blocks injected across all prompts.
    pub reminders: usize,
    /// Pages kept after retrieval, in document order. Absent for methods
    /// without a retrieval phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_pages: Option<Vec<u32>>,
    /// Returned page ids that do not exist in the document.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_pages: Vec<u32>,
    /// Retrieval responses that did not parse and counted as empty.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub malformed_retrievals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_page: Option<u32>,
    /// First page returned by the single-page probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_page: Option<u32>,
    pub m: usize,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl RunTrace {
    pub fn input_tokens(&self) -> usize {
        self.calls.iter().map(|c| c.input_tokens).sum()
    }

    pub fn output_tokens(&self) -> usize {
        self.calls.iter().map(|c| c.output_tokens).sum()
    }

    /// True when some call hit an error that will recur on every call.
    pub fn is_fatal(&self) -> bool {
        self.calls.iter().any(|c| c.fatal)
    }

    /// Copy with latencies zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunTrace {
        let mut t = self.clone();
        for call in &mut t.calls {
            call.latency_ms = 0;
        }
        t
    }
}

pub fn write_trace<W: Write>(trace: &RunTrace, mut out: W) -> Result<(), PipelineError> {
    let mut line = serde_json::to_string(trace).expect("traces serialize");
    line.push('\n');
    out.write_all(line.as_bytes())?;
    Ok(())
}

/// Reads trace JSONL. A final line that is cut off (no newline, not valid
/// JSON) is skipped so interrupted runs can resume.
pub fn read_traces<R: BufRead>(mut input: R) -> Result<Vec<RunTrace>, PipelineError> {
    let mut traces = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunTrace>(&line) {
            Ok(trace) => traces.push(trace),
            Err(_) if !line.ends_with('\n') => break,
            Err(e) => return Err(PipelineError::Schema { line: number, message: e.to_string() }),
        }
    }
    Ok(traces)
}

/// Sample ids already present in a trace list.
pub fn completed_ids(traces: &[RunTrace]) -> HashSet<String> {
    traces.iter().map(|t| t.sample_id.clone()).collect()
}
