//! The QA methods and their orchestration.
//!
//! | method       | calls                                   |
//! |--------------|-----------------------------------------|
//! | Baseline     | QA over the document                    |
//! | Reprompt     | QA over the document with reminders     |
//! | ICR          | retrieval, then QA over retrieved pages |
//! | RR           | ICR with reminders in the retrieval call|
//! | ChunkedICR   | retrieval per chunk, then one QA call   |
//! | ChunkedRR    | ChunkedICR with reminders in each chunk |
//! | PageProbe    | retrieval of the single best page       |
//!
//! The QA call after retrieval never carries reminders.

mod chunk;
mod parse;
mod trace;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QASample;
use crate::docmodel::{abbreviate, document_layout, render_document, PaginatedDocument, TokenCounter};
use crate::llm::{Backend, CompletionRequest};
use crate::prompt::{
    inject_reminders, FormatInstructions, PromptError, PromptPlan, ReminderStrategy, TaskKind, TemplateSet, DEFAULT_K, DEFAULT_R,
};

pub use chunk::{aggregate_retrieved, chunk_split};
pub use parse::{parse_qa_response, parse_retrieval_response};
pub use trace::{completed_ids, read_traces, write_trace, CallRecord, Phase, RunTrace, TraceStatus, TRACE_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Reprompt,
    Icr,
    Rr,
    ChunkedIcr,
    ChunkedRr,
    PageProbe,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Baseline, Method::Reprompt, Method::Icr, Method::Rr, Method::ChunkedIcr, Method::ChunkedRr, Method::PageProbe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Reprompt => "reprompt",
            Method::Icr => "icr",
            Method::Rr => "rr",
            Method::ChunkedIcr => "chunked-icr",
            Method::ChunkedRr => "chunked-rr",
            Method::PageProbe => "page-probe",
        }
    }

    pub fn is_chunked(self) -> bool {
        matches!(self, Method::ChunkedIcr | Method::ChunkedRr)
    }

    pub fn uses_reminders(self) -> bool {
        matches!(self, Method::Reprompt | Method::Rr | Method::ChunkedRr)
    }

    pub fn retrieves(self) -> bool {
        matches!(self, Method::Icr | Method::Rr | Method::ChunkedIcr | Method::ChunkedRr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let key = match key.as_str() {
            "r&r" => "rr",
            "chunked-r&r" => "chunked-rr",
            other => other,
        };
        Method::ALL.iter().copied().find(|m| m.name() == key).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            PipelineError::InvalidConfig(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
        })
    }
}

/// Reminder placement, resolved per document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReminderPlan {
    /// Every `r` tokens.
    #[default]
    Uniform,
    /// Every `r` tokens, pointing back to the instructions only.
    TagsOnly,
    /// As many reminders as `Uniform` would place, all before the first page.
    AtBeginning,
    /// One reminder right before each gold page.
    BeforeGold,
    None,
}

impl ReminderPlan {
    pub fn name(self) -> &'static str {
        match self {
            ReminderPlan::Uniform => "uniform",
            ReminderPlan::TagsOnly => "tags-only",
            ReminderPlan::AtBeginning => "at-beginning",
            ReminderPlan::BeforeGold => "before-gold",
            ReminderPlan::None => "none",
        }
    }

    /// Concrete strategy for one document. `golds` may name pages outside
    /// `doc`; those are ignored.
    pub fn resolve(self, r: usize, doc: &PaginatedDocument, golds: &BTreeSet<u32>, counter: &dyn TokenCounter) -> ReminderStrategy {
        match self {
            ReminderPlan::Uniform => ReminderStrategy::Uniform { r },
            ReminderPlan::TagsOnly => ReminderStrategy::TagsOnly { r },
            ReminderPlan::AtBeginning => {
                let total = if doc.is_empty() { 0 } else { document_layout(counter, doc).total_tokens };
                ReminderStrategy::AtBeginning { copies: total.saturating_sub(1) / r }
            }
            ReminderPlan::BeforeGold => {
                let pages: BTreeSet<u32> = golds.iter().copied().filter(|g| doc.contains(*g)).collect();
                if pages.is_empty() {
                    ReminderStrategy::None
                } else {
                    ReminderStrategy::BeforePages { pages }
                }
            }
            ReminderPlan::None => ReminderStrategy::None,
        }
    }
}

impl FromStr for ReminderPlan {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [ReminderPlan::Uniform, ReminderPlan::TagsOnly, ReminderPlan::AtBeginning, ReminderPlan::BeforeGold, ReminderPlan::None];
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        all.iter().copied().find(|p| p.name() == key).ok_or_else(|| {
            let valid: Vec<&str> = all.iter().map(|p| p.name()).collect();
            PipelineError::InvalidConfig(format!("unknown reminder strategy {s:?}; valid strategies: {}", valid.join(", ")))
        })
    }
}

fn default_r() -> usize {
    DEFAULT_R
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_qa_kind() -> TaskKind {
    TaskKind::QaWithPage
}

fn default_model() -> String {
    "simulator".into()
}

fn default_max_output_tokens() -> u32 {
    512
}

/// Settings of one method run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    #[serde(default)]
    pub reminders: ReminderPlan,
    #[serde(default = "default_qa_kind")]
    pub qa_kind: TaskKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Store full prompt text in traces, not only its hash.
    #[serde(default)]
    pub record_prompts: bool,
}

impl PipelineConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            r: DEFAULT_R,
            k: DEFAULT_K,
            c: None,
            reminders: ReminderPlan::Uniform,
            qa_kind: TaskKind::QaWithPage,
            model: default_model(),
            max_output_tokens: default_max_output_tokens(),
            record_prompts: false,
        }
    }

    pub fn chunked(method: Method, c: usize) -> Self {
        Self { c: Some(c), ..Self::new(method) }
    }

    pub fn with_reminders(mut self, plan: ReminderPlan) -> Self {
        self.reminders = plan;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.method.is_chunked() && !self.c.is_some_and(|c| c >= 1) {
            return bad(format!("{} needs a chunk size c >= 1", self.method));
        }
        if !self.method.is_chunked() && self.c.is_some() {
            return bad(format!("{} does not take a chunk size", self.method));
        }
        if self.method.uses_reminders() && self.reminders == ReminderPlan::None {
            return bad(format!("{} needs a reminder strategy", self.method));
        }
        if self.r == 0 {
            return bad("r must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !self.qa_kind.is_qa() {
            return bad("qa_kind must be qa or qa-with-page".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be at least 1".into());
        }
        Ok(())
    }

    /// Short name identifying these settings, used for trace paths and table
    /// columns. Defaults are left out.
    pub fn label(&self) -> String {
        let mut label = self.method.name().to_owned();
        if self.method.uses_reminders() {
            if self.reminders != ReminderPlan::Uniform {
                label.push('-');
                label.push_str(self.reminders.name());
            }
            if matches!(self.reminders, ReminderPlan::Uniform | ReminderPlan::TagsOnly | ReminderPlan::AtBeginning) && self.r != DEFAULT_R {
                label.push_str(&format!("-r{}", self.r));
            }
        }
        if self.method.retrieves() && self.k != DEFAULT_K {
            label.push_str(&format!("-k{}", self.k));
        }
        if let Some(c) = self.c {
            label.push_str(&format!("-c{c}"));
        }
        if self.method != Method::PageProbe && self.qa_kind == TaskKind::Qa {
            label.push_str("-qa");
        }
        label
    }
}

/// Shared inputs of a run.
struct Context<'a> {
    config: &'a PipelineConfig,
    templates: &'a TemplateSet,
    sample: &'a QASample,
    backend: &'a dyn Backend,
    counter: &'a dyn TokenCounter,
}

/// Outcome of one model call: the record plus the response text when the
/// call succeeded.
struct Call {
    record: CallRecord,
    text: Option<String>,
}

impl Context<'_> {
    fn call(&self, phase: Phase, chunk: Option<usize>, prompt: &str) -> Call {
        let mut record = CallRecord::new(phase, chunk, prompt, self.config.record_prompts);
        let mut request = CompletionRequest::new(prompt, self.config.model.clone()).for_sample(self.sample.id.clone());
        request.max_output_tokens = self.config.max_output_tokens;
        let started = Instant::now();
        match crate::llm::complete(self.backend, &request) {
            Ok(result) => {
                record.response = Some(result.text.clone());
                record.input_tokens = result.input_tokens;
                record.output_tokens = result.output_tokens;
                record.latency_ms = result.latency.as_millis() as u64;
                record.attempts = result.attempts;
                Call { record, text: Some(result.text) }
            }
            Err(e) => {
                record.error = Some(e.to_string());
                record.fatal = e.is_fatal();
                record.latency_ms = started.elapsed().as_millis() as u64;
                Call { record, text: None }
            }
        }
    }

    fn golds(&self) -> BTreeSet<u32> {
        self.sample.gold_set()
    }

    /// Renders `doc` with reminders for a task when `with_reminders` is set.
    fn document_text(&self, doc: &PaginatedDocument, fmt: &FormatInstructions, with_reminders: bool) -> Result<(String, usize), PromptError> {
        if !with_reminders {
            return Ok((render_document(doc), 0));
        }
        let strategy = self.config.reminders.resolve(self.config.r, doc, &self.golds(), self.counter);
        let reminder = strategy.reminder_text(self.templates, &self.sample.question, fmt);
        let text = inject_reminders(doc, &strategy, &reminder, self.counter)?;
        let count = crate::prompt::reminder_slots(doc, &strategy, self.counter)?.len();
        Ok((text, count))
    }

    fn prompt(&self, document: String, format: FormatInstructions) -> String {
        PromptPlan { question: self.sample.question.clone(), document, format }.render(self.templates)
    }
}

fn empty_trace(config: &PipelineConfig, sample: &QASample) -> RunTrace {
    RunTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        sample_id: sample.id.clone(),
        method: config.method,
        label: config.label(),
        c: config.c,
        d: sample.d,
        x: sample.x,
        calls: Vec::new(),
        reminders: 0,
        retrieved_pages: None,
        unknown_pages: Vec::new(),
        malformed_retrievals: 0,
        answer: None,
        answer_page: None,
        probe_page: None,
        m: 0,
        status: TraceStatus::Ok,
        error: None,
    }
}

impl RunTrace {
    fn push(&mut self, call: Call) -> Option<String> {
        if let Some(e) = &call.record.error {
            self.status = TraceStatus::Failed;
            self.error = Some(e.clone());
        }
        self.calls.push(call.record);
        self.m = self.calls.len();
        call.text
    }

    fn fail(&mut self, message: impl Into<String>) {
        self.status = TraceStatus::Failed;
        self.error = Some(message.into());
    }
}

/// Runs one method on one sample with the built-in templates.
pub fn run_method(
    config: &PipelineConfig,
    sample: &QASample,
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
) -> Result<RunTrace, PipelineError> {
    run_method_with(config, TemplateSet::builtin(), sample, backend, counter)
}

/// Runs one method on one sample. Errors are returned only for an invalid
/// configuration; everything that goes wrong per sample is recorded in the
/// trace.
pub fn run_method_with(
    config: &PipelineConfig,
    templates: &TemplateSet,
    sample: &QASample,
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
) -> Result<RunTrace, PipelineError> {
    config.validate()?;
    let cx = Context { config, templates, sample, backend, counter };
    let mut trace = empty_trace(config, sample);
    if let Err(e) = execute(&cx, &mut trace) {
        trace.fail(e.to_string());
    }
    Ok(trace)
}

fn execute(cx: &Context<'_>, trace: &mut RunTrace) -> Result<(), PipelineError> {
    let doc = &cx.sample.document;
    match cx.config.method {
        Method::Baseline | Method::Reprompt => answer(cx, trace, doc, cx.config.method == Method::Reprompt),
        Method::PageProbe => {
            let fmt = FormatInstructions::page_probe();
            let prompt = cx.prompt(render_document(doc), fmt);
            let Some(text) = trace.push(cx.call(Phase::Probe, None, &prompt)) else { return Ok(()) };
            match parse_retrieval_response(&text, 1) {
                Ok(pages) => {
                    trace.probe_page = pages.first().copied();
                    trace.unknown_pages = pages.iter().copied().filter(|p| !doc.contains(*p)).collect();
                    trace.retrieved_pages = Some(pages);
                }
                Err(e) => {
                    trace.status = TraceStatus::Malformed;
                    trace.error = Some(e.to_string());
                }
            }
            Ok(())
        }
        Method::Icr | Method::Rr => {
            let list = retrieve(cx, trace, doc, None, cx.config.method == Method::Rr)?;
            match list {
                Some(list) => answer_over(cx, trace, &[list]),
                None => Ok(()),
            }
        }
        Method::ChunkedIcr | Method::ChunkedRr => {
            let c = cx.config.c.expect("validated");
            let chunks = chunk_split(doc, c, cx.counter);
            let with_reminders = cx.config.method == Method::ChunkedRr;
            let outcomes: Vec<_> = chunks
                .par_iter()
                .enumerate()
                .map(|(i, chunk)| {
                    let mut local = empty_trace(cx.config, cx.sample);
                    let list = retrieve(cx, &mut local, chunk, Some(i), with_reminders);
                    (local, list)
                })
                .collect();

            let mut lists = Vec::with_capacity(outcomes.len());
            for (local, list) in outcomes {
                let fatal = local.is_fatal();
                trace.calls.extend(local.calls);
                trace.reminders += local.reminders;
                trace.malformed_retrievals += local.malformed_retrievals;
                trace.m = trace.calls.len();
                if fatal {
                    trace.fail(local.error.unwrap_or_default());
                    return Ok(());
                }
                // A failed chunk call is on record; its list counts as empty.
                lists.push(list?.unwrap_or_default());
            }
            answer_over(cx, trace, &lists)
        }
    }
}

/// One retrieval call over `doc`. `Ok(None)` means the call itself failed and
/// the failure is already recorded on `trace`; a malformed response counts as
/// an empty list.
fn retrieve(
    cx: &Context<'_>,
    trace: &mut RunTrace,
    doc: &PaginatedDocument,
    chunk: Option<usize>,
    with_reminders: bool,
) -> Result<Option<Vec<u32>>, PipelineError> {
    let fmt = FormatInstructions::retrieval(cx.config.k);
    let (text, reminders) = cx.document_text(doc, &fmt, with_reminders)?;
    trace.reminders += reminders;
    let prompt = cx.prompt(text, fmt);
    let Some(response) = trace.push(cx.call(Phase::Retrieval, chunk, &prompt)) else { return Ok(None) };
    match parse_retrieval_response(&response, cx.config.k) {
        Ok(list) => Ok(Some(list)),
        Err(_) => {
            trace.malformed_retrievals += 1;
            Ok(Some(Vec::new()))
        }
    }
}

/// QA over the pages retrieved in `lists`.
fn answer_over(cx: &Context<'_>, trace: &mut RunTrace, lists: &[Vec<u32>]) -> Result<(), PipelineError> {
    let kept = abbreviate(&cx.sample.document, aggregate_retrieved(lists));
    trace.unknown_pages = kept.unknown.iter().copied().collect();
    trace.retrieved_pages = Some(kept.document.ids().collect());
    answer(cx, trace, &kept.document, false)
}

fn answer(cx: &Context<'_>, trace: &mut RunTrace, doc: &PaginatedDocument, with_reminders: bool) -> Result<(), PipelineError> {
    let fmt = FormatInstructions::for_kind(cx.config.qa_kind, 1);
    let (text, reminders) = cx.document_text(doc, &fmt, with_reminders)?;
    trace.reminders += reminders;
    let prompt = cx.prompt(text, fmt);
    let Some(response) = trace.push(cx.call(Phase::Qa, None, &prompt)) else { return Ok(()) };
    match parse_qa_response(&response, cx.config.qa_kind) {
        Ok((answer, page)) => {
            trace.answer = Some(answer);
            trace.answer_page = page;
        }
        Err(e) => {
            trace.status = TraceStatus::Malformed;
            trace.error = Some(e.to_string());
        }
    }
    Ok(())
}

/// Runs `config` over `samples` on a pool of `parallelism` threads. Traces
/// come back in sample order; `on_trace` sees each one as it finishes, with
/// its sample index.
pub fn run_batch_with<F>(
    config: &PipelineConfig,
    templates: &TemplateSet,
    samples: &[QASample],
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
    parallelism: usize,
    on_trace: F,
) -> Result<Vec<RunTrace>, PipelineError>
where
    F: Fn(usize, &RunTrace) + Sync,
{
    config.validate()?;
    if parallelism == 0 {
        return Err(PipelineError::InvalidConfig("parallelism must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, sample)| {
                let trace = run_method_with(config, templates, sample, backend, counter)?;
                on_trace(i, &trace);
                Ok(trace)
            })
            .collect()
    })
}

/// [`run_batch_with`] using the built-in templates and no callback.
pub fn run_batch(
    config: &PipelineConfig,
    samples: &[QASample],
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
    parallelism: usize,
) -> Result<Vec<RunTrace>, PipelineError> {
    run_batch_with(config, TemplateSet::builtin(), samples, backend, counter, parallelism, |_, _| {})
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::fixture::FixtureSpec;
    use crate::corpus::{build_positioned_document, PassagePool};
    use crate::docmodel::Cl100kCounter;
    use crate::llm::{BiasModel, LlmError, ScriptedBackend, SimulatorBackend};

    fn pool() -> PassagePool {
        let counter = Cl100kCounter::shared();
        FixtureSpec { questions: 3, golds_per_question: 1, page_text_tokens: 188, distracters: 60, seed: 11 }
            .generate(counter.as_ref())
            .unwrap()
    }

    fn sample(x: usize, d: usize) -> QASample {
        let counter = Cl100kCounter::shared();
        let pool = pool();
        let qid = pool.questions[0].qid.clone();
        build_positioned_document(&pool, &qid, x, d, counter.as_ref()).unwrap()
    }

    fn simulator(window: usize, samples: &[QASample]) -> SimulatorBackend {
        SimulatorBackend::new(BiasModel::new(window), Cl100kCounter::shared()).with_samples(samples)
    }

    fn run(config: &PipelineConfig, sample: &QASample, backend: &dyn Backend) -> RunTrace {
        let counter = Cl100kCounter::shared();
        run_method(config, sample, backend, counter.as_ref()).unwrap()
    }

    #[test]
    fn call_counts_per_method() {
        let s = sample(4_000, 10_000);
        let backend = simulator(100_000, std::slice::from_ref(&s));
        for (config, m) in [
            (PipelineConfig::new(Method::Baseline), 1),
            (PipelineConfig::new(Method::Reprompt), 1),
            (PipelineConfig::new(Method::PageProbe), 1),
            (PipelineConfig::new(Method::Icr), 2),
            (PipelineConfig::new(Method::Rr), 2),
            (PipelineConfig::chunked(Method::ChunkedIcr, 2_500), 5),
            (PipelineConfig::chunked(Method::ChunkedRr, 5_000), 3),
        ] {
            let t = run(&config, &s, &backend);
            assert_eq!((t.m, t.calls.len(), t.status), (m, m, TraceStatus::Ok), "{}", config.label());
            if config.method != Method::PageProbe {
                assert_eq!(t.answer.as_deref(), Some(s.answer.as_str()), "{}", config.label());
            } else {
                assert_eq!(t.probe_page, Some(s.gold_pages[0]));
            }
        }
    }

    #[test]
    fn qa_after_retrieval_has_no_reminders() {
        let s = sample(4_000, 10_000);
        let backend = ScriptedBackend::new([Ok(r#"{"pages": [3, 99]}"#.to_string()), Ok(r#"{"answer": "x", "page": 3}"#.to_string())]);
        let config = PipelineConfig { r: 1_000, ..PipelineConfig::new(Method::Rr) };
        let t = run(&config, &s, &backend);
        let prompts = backend.prompts();
        assert!(prompts[0].matches("<INSTRUCTIONS_REMINDER>").count() >= 9);
        assert_eq!(prompts[1].matches("<INSTRUCTIONS_REMINDER>").count(), 0);
        assert_eq!(prompts[1].matches("<PAGE ").count(), 1);
        assert_eq!(t.retrieved_pages, Some(vec![3]));
        assert_eq!(t.unknown_pages, vec![99]);
        assert_eq!(t.reminders, prompts[0].matches("<INSTRUCTIONS_REMINDER>").count());
    }

    #[test]
    fn empty_retrieval_means_empty_document() {
        let s = sample(0, 5_000);
        let backend = ScriptedBackend::new([Ok("I could not decide.".to_string()), Ok(r#"{"answer": "x", "page": 1}"#.to_string())]);
        let t = run(&PipelineConfig::new(Method::Icr), &s, &backend);
        assert_eq!(t.malformed_retrievals, 1);
        assert_eq!(t.retrieved_pages, Some(vec![]));
        assert!(backend.prompts()[1].contains("<DOCUMENT>\n\n</DOCUMENT>"));
    }

    #[test]
    fn failed_chunk_counts_as_empty() {
        let s = sample(0, 5_000);
        let transient = LlmError::Timeout { attempts: 5 };
        let backend = ScriptedBackend::new([
            Ok(r#"{"pages": [1]}"#.to_string()),
            Err(transient),
            Ok(r#"{"answer": "x", "page": 1}"#.to_string()),
        ]);
        let config = PipelineConfig { c: Some(100_000), ..PipelineConfig::chunked(Method::ChunkedIcr, 1) };
        let single = run(&config, &s, &backend);
        assert_eq!(single.m, 2);

        let backend = ScriptedBackend::new([Err(LlmError::Timeout { attempts: 5 }), Ok(r#"{"answer": "x", "page": 1}"#.to_string())]);
        let t = run(&config, &s, &backend);
        assert_eq!(t.m, 2);
        assert!(t.calls[0].error.is_some());
        assert_eq!(t.retrieved_pages, Some(vec![]));
        assert_eq!(t.status, TraceStatus::Ok);
    }

    #[test]
    fn fatal_errors_fail_the_trace() {
        let s = sample(0, 5_000);
        let fatal = LlmError::Backend { retryable: false, status: Some(401), message: "unauthorized".into() };
        let backend = ScriptedBackend::new([Err(fatal)]);
        let t = run(&PipelineConfig::chunked(Method::ChunkedIcr, 1_000), &s, &backend);
        assert_eq!(t.status, TraceStatus::Failed);
        assert!(t.is_fatal());
        assert!(t.answer.is_none());

        let t = run(&PipelineConfig::new(Method::Icr), &s, &backend);
        assert_eq!((t.status, t.m), (TraceStatus::Failed, 1));
    }

    #[test]
    fn malformed_answer_is_recorded() {
        let s = sample(0, 5_000);
        let backend = ScriptedBackend::new([Ok("Paris".to_string())]);
        let t = run(&PipelineConfig::new(Method::Baseline), &s, &backend);
        assert_eq!(t.status, TraceStatus::Malformed);
        assert!(t.answer.is_none());
        assert!(t.error.is_some());
    }

    #[test]
    fn before_gold_places_one_reminder() {
        let s = sample(6_000, 10_000);
        let backend = ScriptedBackend::new([Ok(r#"{"answer": "x", "page": 1}"#.to_string())]);
        let config = PipelineConfig::new(Method::Reprompt).with_reminders(ReminderPlan::BeforeGold);
        let t = run(&config, &s, &backend);
        assert_eq!(t.reminders, 1);
        let gold = s.gold_pages[0];
        assert!(backend.prompts()[0].contains(&format!("</INSTRUCTIONS_REMINDER>\n\n<PAGE {gold}>")));
    }

    #[test]
    fn batch_is_ordered_and_deterministic() {
        let counter = Cl100kCounter::shared();
        let pool = pool();
        let samples: Vec<QASample> = (0..=4)
            .flat_map(|i| {
                let pool = &pool;
                let counter = counter.clone();
                pool.questions.iter().map(move |q| build_positioned_document(pool, &q.qid, i * 2_000, 8_000, counter.as_ref()).unwrap())
            })
            .collect();
        let backend = Arc::new(simulator(2_000, &samples));
        for method in [Method::Baseline, Method::Rr, Method::ChunkedRr] {
            let config = if method.is_chunked() { PipelineConfig::chunked(method, 3_000) } else { PipelineConfig::new(method) };
            let one = run_batch(&config, &samples, &backend, counter.as_ref(), 1).unwrap();
            let eight = run_batch(&config, &samples, &backend, counter.as_ref(), 8).unwrap();
            assert_eq!(one.len(), samples.len());
            for (a, s) in one.iter().zip(&samples) {
                assert_eq!(a.sample_id, s.id);
            }
            let strip = |ts: &[RunTrace]| ts.iter().map(RunTrace::without_timing).collect::<Vec<_>>();
            assert_eq!(strip(&one), strip(&eight));
        }
    }

    #[test]
    fn one_bad_sample_does_not_stop_the_batch() {
        let counter = Cl100kCounter::shared();
        let samples = vec![sample(0, 3_000), sample(3_000, 3_000)];
        let backend = simulator(100_000, &samples[..1]);
        let traces = run_batch(&PipelineConfig::new(Method::Baseline), &samples, &backend, counter.as_ref(), 2).unwrap();
        assert_eq!(traces[0].status, TraceStatus::Ok);
        assert_eq!(traces[1].status, TraceStatus::Failed);
    }

    #[test]
    fn config_validation_and_labels() {
        assert!(PipelineConfig::new(Method::ChunkedIcr).validate().is_err());
        assert!(PipelineConfig::new(Method::Reprompt).with_reminders(ReminderPlan::None).validate().is_err());
        assert!(PipelineConfig { c: Some(10), ..PipelineConfig::new(Method::Icr) }.validate().is_err());
        assert_eq!(PipelineConfig::new(Method::Rr).label(), "rr");
        assert_eq!(PipelineConfig::chunked(Method::ChunkedRr, 10_000).label(), "chunked-rr-c10000");
        assert_eq!(PipelineConfig::new(Method::Reprompt).with_reminders(ReminderPlan::TagsOnly).label(), "reprompt-tags-only");
        assert_eq!(PipelineConfig { r: 5_000, ..PipelineConfig::new(Method::Reprompt) }.label(), "reprompt-r5000");
        assert_eq!(PipelineConfig { qa_kind: TaskKind::Qa, ..PipelineConfig::new(Method::Baseline) }.label(), "baseline-qa");

        assert_eq!("R&R".parse::<Method>().unwrap(), Method::Rr);
        assert_eq!("chunked_icr".parse::<Method>().unwrap(), Method::ChunkedIcr);
        let err = "magic".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("baseline") && err.contains("page-probe"));
    }
}
