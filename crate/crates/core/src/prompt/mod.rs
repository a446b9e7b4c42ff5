//! Prompt assembly and instruction-reminder injection.
//!
//! Every prompt has the same three-part layout: an `INSTRUCTIONS` block, the
//! `DOCUMENT` block and a closing `INSTRUCTIONS` block that repeats the task.
//! Reminder blocks are injected between pages of the document, never inside a
//! `PAGE` block.

mod inject;
mod templates;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inject::{inject_reminders, reminder_slots, strip_reminders};
pub use templates::{substitute, Bindings, TemplateName, TemplateSet};

pub const INSTRUCTIONS_OPEN: &str = "<INSTRUCTIONS>";
pub const INSTRUCTIONS_CLOSE: &str = "</INSTRUCTIONS>";
pub const DOCUMENT_OPEN: &str = "<DOCUMENT>";
pub const DOCUMENT_CLOSE: &str = "</DOCUMENT>";

/// Present in the format instructions of every page-retrieval task.
pub const PAGES_SCHEMA_MARKER: &str = r#"{"pages": ["#;
/// Present only in the format instructions of the qa-with-page task.
pub const PAGE_FIELD_MARKER: &str = r#""page": <"#;

/// Default retrieval width.
pub const DEFAULT_K: usize = 5;
/// Default reminder interval, in tokens.
pub const DEFAULT_R: usize = 10_000;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("page {0} is not in the document")]
    UnknownPage(u32),
    #[error("invalid reminder strategy: {0}")]
    InvalidStrategy(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Qa,
    QaWithPage,
    Retrieval,
    PageProbe,
}

impl TaskKind {
    pub fn is_qa(self) -> bool {
        matches!(self, TaskKind::Qa | TaskKind::QaWithPage)
    }
}

/// Response-format instructions substituted for `{format_instructions}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatInstructions {
    pub kind: TaskKind,
    /// Retrieval width; 1 for the page probe, unused for QA kinds.
    pub k: usize,
    pub text: String,
}

impl FormatInstructions {
    pub fn qa() -> Self {
        Self {
            kind: TaskKind::Qa,
            k: 1,
            text: r#"Respond with a single JSON object and nothing else, in the form {"answer": "<answer>"}, where "answer" is a single word or short phrase that answers the question."#.into(),
        }
    }

    pub fn qa_with_page() -> Self {
        Self {
            kind: TaskKind::QaWithPage,
            k: 1,
            text: r#"Respond with a single JSON object and nothing else, in the form {"answer": "<answer>", "page": <page number>}, where "answer" is a single word or short phrase that answers the question and "page" is the number of the page containing the answer."#.into(),
        }
    }

    /// Panics if `k` is 0.
    pub fn retrieval(k: usize) -> Self {
        assert!(k >= 1, "retrieval width must be at least 1");
        if k == 1 {
            return Self::page_probe();
        }
        Self {
            kind: TaskKind::Retrieval,
            k,
            text: format!(
                r#"Respond with a single JSON object and nothing else, in the form {{"pages": [<page number>, ...]}}, listing up to {k} page numbers from most to least relevant."#
            ),
        }
    }

    pub fn page_probe() -> Self {
        Self {
            kind: TaskKind::PageProbe,
            k: 1,
            text: r#"Respond with a single JSON object and nothing else, in the form {"pages": [<page number>]}, containing only the number of the single most relevant page."#.into(),
        }
    }

    pub fn for_kind(kind: TaskKind, k: usize) -> Self {
        match kind {
            TaskKind::Qa => Self::qa(),
            TaskKind::QaWithPage => Self::qa_with_page(),
            TaskKind::Retrieval => Self::retrieval(k),
            TaskKind::PageProbe => Self::page_probe(),
        }
    }

    /// Compact description of the expected JSON response.
    pub fn schema(&self) -> &'static str {
        match self.kind {
            TaskKind::Qa => r#"{"answer": string}"#,
            TaskKind::QaWithPage => r#"{"answer": string, "page": int}"#,
            TaskKind::Retrieval | TaskKind::PageProbe => r#"{"pages": [int]}"#,
        }
    }
}

/// Where reminder blocks go.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ReminderStrategy {
    /// At the first page boundary at or after every multiple of `r` tokens.
    Uniform { r: usize },
    /// Same placement as `Uniform`, with a reminder that only points back to
    /// the original instructions.
    TagsOnly { r: usize },
    /// `copies` reminders before the first page.
    AtBeginning { copies: usize },
    /// One reminder right before each listed page.
    BeforePages { pages: BTreeSet<u32> },
    None,
}

impl ReminderStrategy {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            ReminderStrategy::Uniform { r: 0 } | ReminderStrategy::TagsOnly { r: 0 } => {
                Err(PromptError::InvalidStrategy("r must be at least 1".into()))
            }
            ReminderStrategy::BeforePages { pages } if pages.is_empty() => {
                Err(PromptError::InvalidStrategy("before-pages needs at least one page".into()))
            }
            _ => Ok(()),
        }
    }

    /// The reminder block this strategy injects for a task.
    pub fn reminder_text(&self, templates: &TemplateSet, question: &str, fmt: &FormatInstructions) -> String {
        match self {
            ReminderStrategy::TagsOnly { .. } => templates.tags_only_reminder(),
            _ => templates.render_reminder(question, fmt),
        }
    }
}

/// Everything needed to render one prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPlan {
    pub question: String,
    /// Rendered document text, reminders included.
    pub document: String,
    pub format: FormatInstructions,
}

impl PromptPlan {
    pub fn render(&self, templates: &TemplateSet) -> String {
        match self.format.kind {
            TaskKind::Qa | TaskKind::QaWithPage => templates.render_qa(&self.question, &self.document, &self.format),
            TaskKind::Retrieval | TaskKind::PageProbe => templates.render_icr(&self.question, &self.document, &self.format),
        }
    }
}

/// QA prompt with the built-in templates.
pub fn render_qa_prompt(question: &str, document: &str, fmt: &FormatInstructions) -> String {
    TemplateSet::builtin().render_qa(question, document, fmt)
}

/// Page-retrieval prompt asking for up to `k` pages, with the built-in
/// templates. `k` = 1 gives the single-page probe.
pub fn render_icr_prompt(question: &str, document: &str, k: usize) -> String {
    TemplateSet::builtin().render_icr(question, document, &FormatInstructions::retrieval(k))
}

/// Reminder block matching the task of `fmt`, with the built-in templates.
pub fn render_reminder(question: &str, fmt: &FormatInstructions) -> String {
    TemplateSet::builtin().render_reminder(question, fmt)
}

/// Reminder block that only refers back to the `INSTRUCTIONS` tag.
pub fn render_tags_only_reminder() -> String {
    TemplateSet::builtin().tags_only_reminder()
}
