//! Deterministic stand-in for a long-context model.
//!
//! The simulated model answers correctly exactly when every relevant page sits
//! within `window` tokens of some copy of the task instructions: the leading
//! `INSTRUCTIONS` block, any `INSTRUCTIONS_REMINDER` block, or the trailing
//! `INSTRUCTIONS` block. Distances run from the end of an instruction block to
//! the start of a page's opening tag, counting only non-whitespace text in
//! between, so a reminder placed right before a page is at distance 0.
//!
//! Ground truth arrives out of band through [`TruthSidecar`]; nothing in the
//! prompt reveals which pages are relevant.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, CompletionRequest, CompletionResult, LlmError};
use crate::corpus::QASample;
use crate::docmodel::{parse_blocks, ParsedPage, SharedCounter, TokenCounter};
use crate::prompt::{DOCUMENT_CLOSE, DOCUMENT_OPEN, INSTRUCTIONS_CLOSE, INSTRUCTIONS_OPEN, PAGES_SCHEMA_MARKER, PAGE_FIELD_MARKER};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrongAnswerPolicy {
    /// First ten words of the lowest-id non-relevant page.
    #[default]
    FixedDistracter,
    /// First ten words of the non-relevant page closest to the instructions.
    NearestPageText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasModel {
    /// Largest instruction-to-page distance, in tokens, the model still uses.
    pub window: usize,
    #[serde(default)]
    pub wrong_answer: WrongAnswerPolicy,
}

impl BiasModel {
    pub fn new(window: usize) -> Self {
        Self { window, wrong_answer: WrongAnswerPolicy::default() }
    }
}

/// Ground truth for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub answer: String,
    pub gold_pages: Vec<u32>,
}

impl From<&QASample> for TruthSidecar {
    fn from(sample: &QASample) -> Self {
        Self { answer: sample.answer.clone(), gold_pages: sample.gold_pages.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Qa,
    QaWithPage,
    Retrieval { k: usize },
}

/// Structure recovered from a rendered prompt.
#[derive(Debug, Clone)]
pub struct PromptAnatomy {
    pub kind: TaskKind,
    pub pages: Vec<ParsedPage>,
    /// Byte offset just past each instruction-bearing block, in prompt order.
    pub instruction_ends: Vec<usize>,
}

fn k_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"up to (\d+) page numbers").expect("valid regex"))
}

fn unparseable(msg: &str) -> LlmError {
    LlmError::UnparseablePrompt(msg.to_owned())
}

fn find_from(text: &str, from: usize, needle: &str) -> Option<usize> {
    text[from..].find(needle).map(|i| from + i)
}

impl PromptAnatomy {
    pub fn parse(prompt: &str) -> Result<Self, LlmError> {
        let lead_open = prompt.find(INSTRUCTIONS_OPEN).ok_or_else(|| unparseable("no leading instructions"))?;
        let lead_close = find_from(prompt, lead_open, INSTRUCTIONS_CLOSE).ok_or_else(|| unparseable("unterminated leading instructions"))?;
        let lead_end = lead_close + INSTRUCTIONS_CLOSE.len();
        let instructions = &prompt[lead_open..lead_close];

        let doc_open = find_from(prompt, lead_end, DOCUMENT_OPEN).ok_or_else(|| unparseable("no document block"))?;
        let doc_start = doc_open + DOCUMENT_OPEN.len();
        let doc_close = prompt.rfind(DOCUMENT_CLOSE).filter(|c| *c >= doc_start).ok_or_else(|| unparseable("unterminated document"))?;
        let doc_end = doc_close + DOCUMENT_CLOSE.len();

        let trail_open = find_from(prompt, doc_end, INSTRUCTIONS_OPEN).ok_or_else(|| unparseable("no trailing instructions"))?;
        let trail_close = find_from(prompt, trail_open, INSTRUCTIONS_CLOSE).ok_or_else(|| unparseable("unterminated trailing instructions"))?;

        let blocks = parse_blocks(&prompt[doc_start..doc_close]).map_err(|e| LlmError::UnparseablePrompt(e.to_string()))?;
        let mut pages = blocks.pages;
        for page in &mut pages {
            page.span = page.span.start + doc_start..page.span.end + doc_start;
        }

        let mut instruction_ends = vec![lead_end];
        instruction_ends.extend(blocks.reminders.iter().map(|r| r.end + doc_start));
        instruction_ends.push(trail_close + INSTRUCTIONS_CLOSE.len());

        let kind = if instructions.contains(PAGES_SCHEMA_MARKER) {
            let k = k_pattern().captures(instructions).and_then(|c| c[1].parse().ok()).unwrap_or(1);
            TaskKind::Retrieval { k }
        } else if instructions.contains(PAGE_FIELD_MARKER) {
            TaskKind::QaWithPage
        } else {
            TaskKind::Qa
        };
        Ok(Self { kind, pages, instruction_ends })
    }

    /// Token distance from each page to its nearest instruction block.
    pub fn page_distances(&self, prompt: &str, counter: &dyn TokenCounter) -> Vec<usize> {
        let mut cuts: BTreeSet<usize> = self.instruction_ends.iter().copied().collect();
        cuts.extend(self.pages.iter().map(|p| p.span.start));
        let cuts: Vec<usize> = cuts.into_iter().collect();

        let mut position = HashMap::with_capacity(cuts.len());
        let mut tokens = 0;
        for (i, cut) in cuts.iter().enumerate() {
            if i > 0 {
                tokens += counter.count(prompt[cuts[i - 1]..*cut].trim());
            }
            position.insert(*cut, tokens);
        }
        let anchors: Vec<usize> = self.instruction_ends.iter().map(|e| position[e]).collect();
        self.pages
            .iter()
            .map(|p| {
                let at = position[&p.span.start];
                anchors.iter().map(|a| a.abs_diff(at)).min().expect("at least two instruction blocks")
            })
            .collect()
    }
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Computes the simulated model's response to one prompt.
pub fn simulate_completion(
    model: &BiasModel,
    truth: &TruthSidecar,
    prompt: &str,
    counter: &dyn TokenCounter,
) -> Result<CompletionResult, LlmError> {
    let anatomy = PromptAnatomy::parse(prompt)?;
    let distances = anatomy.page_distances(prompt, counter);
    let gold: BTreeSet<u32> = truth.gold_pages.iter().copied().collect();
    let ids: Vec<u32> = anatomy.pages.iter().map(|p| p.page.id()).collect();

    let visible = |i: usize| distances[i] <= model.window;
    let mut non_gold: Vec<usize> = (0..ids.len()).filter(|i| !gold.contains(&ids[*i])).collect();

    let text = match anatomy.kind {
        TaskKind::Retrieval { k } => {
            let mut golds: Vec<usize> = (0..ids.len()).filter(|i| gold.contains(&ids[*i]) && visible(*i)).collect();
            golds.sort_by_key(|i| (distances[*i], ids[*i]));
            non_gold.sort_by_key(|i| (distances[*i], ids[*i]));
            let mut picked: Vec<u32> = golds.into_iter().chain(non_gold).take(k).map(|i| ids[i]).collect();
            picked.sort_unstable();
            json!({ "pages": picked }).to_string()
        }
        TaskKind::Qa | TaskKind::QaWithPage => {
            let all_visible = !gold.is_empty() && gold.iter().all(|g| ids.iter().position(|id| id == g).is_some_and(visible));
            let (answer, page) = if all_visible {
                (truth.answer.clone(), gold.iter().next().copied())
            } else {
                let decoy = match model.wrong_answer {
                    WrongAnswerPolicy::FixedDistracter => non_gold.iter().copied().min_by_key(|i| ids[*i]),
                    WrongAnswerPolicy::NearestPageText => non_gold.iter().copied().min_by_key(|i| (distances[*i], ids[*i])),
                };
                match decoy {
                    Some(i) => (first_words(anatomy.pages[i].page.text(), 10), Some(ids[i])),
                    None => ("unknown".to_owned(), None),
                }
            };
            if anatomy.kind == TaskKind::QaWithPage {
                json!({ "answer": answer, "page": page.unwrap_or(0) }).to_string()
            } else {
                json!({ "answer": answer }).to_string()
            }
        }
    };

    Ok(CompletionResult {
        input_tokens: counter.count(prompt),
        output_tokens: counter.count(&text),
        text,
        latency: Duration::ZERO,
        attempts: 1,
    })
}

/// Backend serving [`simulate_completion`], with ground truth registered per
/// sample id.
pub struct SimulatorBackend {
    model: BiasModel,
    counter: SharedCounter,
    truths: HashMap<String, TruthSidecar>,
}

impl std::fmt::Debug for SimulatorBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatorBackend").field("model", &self.model).field("truths", &self.truths.len()).finish()
    }
}

impl SimulatorBackend {
    pub fn new(model: BiasModel, counter: SharedCounter) -> Self {
        Self { model, counter, truths: HashMap::new() }
    }

    pub fn with_samples<'a>(mut self, samples: impl IntoIterator<Item = &'a QASample>) -> Self {
        for s in samples {
            self.truths.insert(s.id.clone(), TruthSidecar::from(s));
        }
        self
    }

    pub fn insert_truth(&mut self, sample_id: impl Into<String>, truth: TruthSidecar) {
        self.truths.insert(sample_id.into(), truth);
    }

    pub fn model(&self) -> &BiasModel {
        &self.model
    }
}

impl Backend for SimulatorBackend {
    fn name(&self) -> &str {
        "simulator"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let id = request.sample_id.as_deref().ok_or_else(|| LlmError::Config("simulator requests need a sample id".into()))?;
        let truth = self.truths.get(id).ok_or_else(|| LlmError::Config(format!("no ground truth for sample {id}")))?;
        simulate_completion(&self.model, truth, &request.prompt, self.counter.as_ref())
    }
}
