//! Position-controlled QA samples.
//!
//! A sample is a question, its gold answer and a document built from a
//! relevance-ordered distracter list with the gold passage(s) inserted at a
//! controlled token offset. Construction never splits a page: the gold goes in
//! front of the first distracter whose start offset reaches the target, and
//! document length is met by truncating the distracter list at whole pages.

mod builder;
pub mod fixture;
mod io;
mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{DocError, PaginatedDocument};
use crate::llm::LlmError;

pub use builder::{
    build_positioned_document, build_scattered_document, scatter_samples, scatter_targets, sweep_samples, DistracterLayout,
};
pub use io::{load_pool, load_samples, read_pool, read_samples, save_pool, save_samples, write_pool, write_samples};
pub use synthetic::{generate_synthetic_qa, generation_prompt, select_abstracts, AbstractBounds, SyntheticQa};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("question {qid}: distracters reach only {available} of {needed} tokens")]
    InsufficientDistracters { qid: String, needed: usize, available: usize },
    #[error("unknown question id {0}")]
    UnknownQuestion(String),
    #[error("question {qid} has {golds} gold passages; {expected}")]
    GoldCount { qid: String, golds: usize, expected: &'static str },
    #[error("answer position {x} is outside 0..={d}")]
    PositionOutOfRange { x: usize, d: usize },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("pool has {available} usable questions, {requested} requested")]
    NotEnoughQuestions { requested: usize, available: usize },
    #[error("abstract is {tokens} tokens, outside {min}..={max}")]
    AbstractLength { tokens: usize, min: usize, max: usize },
    #[error("malformed generation: {0}")]
    MalformedGeneration(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Document(#[from] DocError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A question with its gold passage(s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolQuestion {
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub golds: Vec<String>,
}

/// A filler passage. Distracters tagged with a `qid` belong to that question
/// only; untagged ones are shared by every question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distracter {
    pub qid: Option<String>,
    pub text: String,
    pub rank: Option<u32>,
}

/// Gold and distracter passages, in load order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassagePool {
    pub questions: Vec<PoolQuestion>,
    pub distracters: Vec<Distracter>,
}

impl PassagePool {
    pub fn question(&self, qid: &str) -> Option<&PoolQuestion> {
        self.questions.iter().find(|q| q.qid == qid)
    }

    /// Distracters for a question: its own (in load order) followed by the
    /// shared ones.
    pub fn distracters_for(&self, qid: &str) -> Vec<&str> {
        let own = self.distracters.iter().filter(|d| d.qid.as_deref() == Some(qid));
        let shared = self.distracters.iter().filter(|d| d.qid.is_none());
        own.chain(shared).map(|d| d.text.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty() && self.distracters.is_empty()
    }
}

/// One constructed QA instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub gold_pages: Vec<u32>,
    /// Target answer position in tokens; absent for scattered golds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    /// Target document length in tokens.
    pub d: usize,
    #[serde(rename = "pages")]
    pub document: PaginatedDocument,
}

impl QASample {
    pub fn gold_count(&self) -> usize {
        self.gold_pages.len()
    }

    pub fn gold_set(&self) -> BTreeSet<u32> {
        self.gold_pages.iter().copied().collect()
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.gold_pages.is_empty() {
            return Err("gold_pages is empty".into());
        }
        if let Some(missing) = self.gold_pages.iter().find(|id| !self.document.contains(**id)) {
            return Err(format!("gold page {missing} is not in the document"));
        }
        Ok(())
    }
}

/// Position sweep for one document length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub d: usize,
    pub step: usize,
    pub questions: usize,
}

impl SweepSpec {
    pub fn new(d: usize, step: usize, questions: usize) -> Result<Self, CorpusError> {
        if step == 0 || d == 0 || d % step != 0 {
            return Err(CorpusError::InvalidSweep(format!("d={d} must be a positive multiple of step={step}")));
        }
        if questions == 0 {
            return Err(CorpusError::InvalidSweep("question count must be positive".into()));
        }
        Ok(Self { d, step, questions })
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> {
        (0..=self.d).step_by(self.step)
    }

    /// Samples produced: one per question and position.
    pub fn sample_count(&self) -> usize {
        self.questions * (1 + self.d / self.step)
    }
}

pub(crate) fn positioned_id(qid: &str, d: usize, x: usize) -> String {
    format!("{qid}/d{d}/x{x}")
}

pub(crate) fn scattered_id(qid: &str, d: usize) -> String {
    format!("{qid}/d{d}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_counts_follow_position_grid() {
        for (d, expected) in [(10_000, 100), (20_000, 150), (40_000, 250), (80_000, 450)] {
            let spec = SweepSpec::new(d, 10_000, 50).unwrap();
            assert_eq!(spec.sample_count(), expected);
            assert_eq!(spec.sample_count(), 50 + d / 200);
        }
        let one = SweepSpec::new(20_000, 10_000, 1).unwrap();
        assert_eq!(one.positions().collect::<Vec<_>>(), vec![0, 10_000, 20_000]);
        assert!(SweepSpec::new(25_000, 10_000, 1).is_err());
        assert!(SweepSpec::new(10_000, 0, 1).is_err());
    }

    #[test]
    fn shared_and_owned_distracters() {
        let pool = PassagePool {
            questions: vec![],
            distracters: vec![
                Distracter { qid: None, text: "shared".into(), rank: None },
                Distracter { qid: Some("q1".into()), text: "own".into(), rank: Some(1) },
                Distracter { qid: Some("q2".into()), text: "other".into(), rank: Some(1) },
            ],
        };
        assert_eq!(pool.distracters_for("q1"), vec!["own", "shared"]);
        assert_eq!(pool.distracters_for("q3"), vec!["shared"]);
    }
}
