use std::borrow::Cow;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Captures, Regex};

use super::{FormatInstructions, PromptError, TaskKind};

const QA: &str = "<INSTRUCTIONS>
Answer the following question based on the document provided and no additional extraneous information:
{question}

{format_instructions}
</INSTRUCTIONS>

<DOCUMENT>
{document}
</DOCUMENT>

<INSTRUCTIONS>
Now, answer the following question based on the above document and no additional extraneous information:
{question}

{format_instructions}
</INSTRUCTIONS>";

const QA_REMINDER: &str = "<INSTRUCTIONS_REMINDER>
Remember, your task is to answer the following question based on this document and no additional extraneous information:
{question}

{format_instructions}</INSTRUCTIONS_REMINDER>";

const RETRIEVAL: &str = "<INSTRUCTIONS>
Below is a document that is separated into page numbers. Identify up to {k} page numbers in the document that are most relevant to the following question:
{question}

{format_instructions}
</INSTRUCTIONS>

<DOCUMENT>
{document}
</DOCUMENT>

<INSTRUCTIONS>
Now, identify up to {k} page numbers in the document that are most relevant to the following question.
{question}

{format_instructions}
</INSTRUCTIONS>";

const RETRIEVAL_REMINDER: &str = "<INSTRUCTIONS_REMINDER>
Remember, your task is to identify up to {k} page numbers in the document that are most relevant to the following question:
{question}

{format_instructions}
</INSTRUCTIONS_REMINDER>";

const PROBE: &str = "<INSTRUCTIONS>
Below is a document that is separated into page numbers. Identify the page most relevant to answering the following question:
{question}

{format_instructions}
</INSTRUCTIONS>

<DOCUMENT>
{document}
</DOCUMENT>

<INSTRUCTIONS>
Now, identify the page most relevant to answering the following question.
{question}

{format_instructions}
</INSTRUCTIONS>";

const PROBE_REMINDER: &str = "<INSTRUCTIONS_REMINDER>
Remember, your task is to identify the page most relevant to answering the following question:
{question}

{format_instructions}
</INSTRUCTIONS_REMINDER>";

const TAGS_ONLY_REMINDER: &str = "<INSTRUCTIONS_REMINDER>
Remember, your task is to follow the instructions under the \"<INSTRUCTIONS>\" tag
</INSTRUCTIONS_REMINDER>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateName {
    Qa,
    QaReminder,
    Retrieval,
    RetrievalReminder,
    Probe,
    ProbeReminder,
    TagsOnlyReminder,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Qa,
        TemplateName::QaReminder,
        TemplateName::Retrieval,
        TemplateName::RetrievalReminder,
        TemplateName::Probe,
        TemplateName::ProbeReminder,
        TemplateName::TagsOnlyReminder,
    ];

    /// File stem used in override directories.
    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateName::Qa => "qa",
            TemplateName::QaReminder => "qa_reminder",
            TemplateName::Retrieval => "retrieval",
            TemplateName::RetrievalReminder => "retrieval_reminder",
            TemplateName::Probe => "probe",
            TemplateName::ProbeReminder => "probe_reminder",
            TemplateName::TagsOnlyReminder => "tags_only_reminder",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateName::Qa => QA,
            TemplateName::QaReminder => QA_REMINDER,
            TemplateName::Retrieval => RETRIEVAL,
            TemplateName::RetrievalReminder => RETRIEVAL_REMINDER,
            TemplateName::Probe => PROBE,
            TemplateName::ProbeReminder => PROBE_REMINDER,
            TemplateName::TagsOnlyReminder => TAGS_ONLY_REMINDER,
        }
    }
}

/// Values for the known placeholders. Unset ones are left in place.
#[derive(Debug, Default, Clone, Copy)]
pub struct Bindings<'a> {
    pub question: Option<&'a str>,
    pub document: Option<&'a str>,
    pub format_instructions: Option<&'a str>,
    pub k: Option<usize>,
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(question|document|format_instructions|k)\}").expect("valid regex"))
}

/// Replaces `{question}`, `{document}`, `{format_instructions}` and `{k}` in a
/// single pass, so substituted text is never expanded again. Other braces are
/// left alone.
pub fn substitute(template: &str, bindings: &Bindings<'_>) -> String {
    placeholder()
        .replace_all(template, |caps: &Captures<'_>| -> Cow<'_, str> {
            let value = match &caps[1] {
                "question" => bindings.question.map(Cow::Borrowed),
                "document" => bindings.document.map(Cow::Borrowed),
                "format_instructions" => bindings.format_instructions.map(Cow::Borrowed),
                _ => bindings.k.map(|k| Cow::Owned(k.to_string())),
            };
            value.unwrap_or_else(|| Cow::Owned(caps[0].to_owned()))
        })
        .into_owned()
}

/// The prompt templates in use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    texts: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self { texts: TemplateName::ALL.iter().map(|n| n.builtin().to_owned()).collect() }
    }
}

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(TemplateSet::default)
    }

    /// Built-in templates with any `<stem>.txt` file in `dir` taking
    /// precedence. A single trailing newline in a file is ignored.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = Self::default();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
            let name = TemplateName::ALL.iter().copied().find(|n| n.file_stem() == stem).ok_or_else(|| {
                let known: Vec<_> = TemplateName::ALL.iter().map(|n| n.file_stem()).collect();
                PromptError::Template { name: stem.clone(), message: format!("unknown template; expected one of {}", known.join(", ")) }
            })?;
            let text = std::fs::read_to_string(&path)?;
            let text = text.strip_suffix('\n').map(|t| t.strip_suffix('\r').unwrap_or(t)).unwrap_or(&text);
            set.set(name, text);
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &str {
        &self.texts[name as usize]
    }

    pub fn set(&mut self, name: TemplateName, text: impl Into<String>) {
        self.texts[name as usize] = text.into();
    }

    pub fn render_qa(&self, question: &str, document: &str, fmt: &FormatInstructions) -> String {
        let b = Bindings { question: Some(question), document: Some(document), format_instructions: Some(&fmt.text), k: None };
        substitute(self.get(TemplateName::Qa), &b)
    }

    pub fn render_icr(&self, question: &str, document: &str, fmt: &FormatInstructions) -> String {
        let name = if fmt.kind == TaskKind::PageProbe { TemplateName::Probe } else { TemplateName::Retrieval };
        let b = Bindings { question: Some(question), document: Some(document), format_instructions: Some(&fmt.text), k: Some(fmt.k) };
        substitute(self.get(name), &b)
    }

    pub fn render_reminder(&self, question: &str, fmt: &FormatInstructions) -> String {
        let name = match fmt.kind {
            TaskKind::Qa | TaskKind::QaWithPage => TemplateName::QaReminder,
            TaskKind::Retrieval => TemplateName::RetrievalReminder,
            TaskKind::PageProbe => TemplateName::ProbeReminder,
        };
        let b = Bindings { question: Some(question), document: None, format_instructions: Some(&fmt.text), k: Some(fmt.k) };
        substitute(self.get(name), &b)
    }

    pub fn tags_only_reminder(&self) -> String {
        self.get(TemplateName::TagsOnlyReminder).to_owned()
    }
}
