//! Scoring and cost accounting.
//!
//! A predicted answer matches the gold answer when the unique words of one
//! are contained in the unique words of the other, after lowercasing and
//! dropping every character that is neither alphanumeric nor whitespace.

mod table;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QASample;
use crate::pipeline::{Method, RunTrace, TraceStatus};

pub use table::{chunk_table, cost_table, format_tokens, position_table, score_table, Table};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace refers to unknown sample {0}")]
    MissingSample(String),
    #[error("sample {0} has more than one gold page; the page probe needs exactly one")]
    MultiGoldSample(String),
    #[error("{label} at d={d}: traces disagree on the number of calls ({counts:?})")]
    InconsistentCallCount { label: String, d: usize, counts: Vec<usize> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unique lowercase words of `text`, with non-alphanumeric, non-space
/// characters removed (not replaced).
pub fn normalize_answer(text: &str) -> BTreeSet<String> {
    let cleaned: String = text.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// 1 when either answer's word set contains the other's, else 0. An empty
/// answer matches only another empty answer.
pub fn fuzzy_match(gold: &str, predicted: &str) -> u8 {
    let a = normalize_answer(gold);
    let b = normalize_answer(predicted);
    if a.is_empty() || b.is_empty() {
        return u8::from(a.is_empty() && b.is_empty());
    }
    u8::from(a.is_subset(&b) || b.is_subset(&a))
}

/// Score of one trace: failed or malformed traces score 0.
pub fn trace_score(trace: &RunTrace, sample: &QASample) -> u8 {
    match (&trace.status, &trace.answer) {
        (TraceStatus::Ok, Some(answer)) => fuzzy_match(&sample.answer, answer),
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    /// Configuration label of the method.
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    pub d: usize,
    /// Answer position, for breakdown rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    pub score: f64,
    pub n: usize,
}

fn index<'a>(samples: &'a [QASample]) -> HashMap<&'a str, &'a QASample> {
    samples.iter().map(|s| (s.id.as_str(), s)).collect()
}

/// Mean score per (method, d). With `by_position`, rows per answer position
/// follow for traces that have one.
pub fn score_traces(dataset: &str, traces: &[RunTrace], samples: &[QASample], by_position: bool) -> Result<Vec<ScoreRow>, EvalError> {
    let samples = index(samples);
    type Key = (String, Option<usize>, usize, Option<usize>);
    let mut cells: BTreeMap<Key, (usize, usize)> = BTreeMap::new();
    for trace in traces {
        let sample = samples.get(trace.sample_id.as_str()).ok_or_else(|| EvalError::MissingSample(trace.sample_id.clone()))?;
        let score = trace_score(trace, sample) as usize;
        let mut keys = vec![(trace.label.clone(), trace.c, trace.d, None)];
        if by_position && trace.x.is_some() {
            keys.push((trace.label.clone(), trace.c, trace.d, trace.x));
        }
        for key in keys {
            let cell = cells.entry(key).or_default();
            cell.0 += score;
            cell.1 += 1;
        }
    }
    Ok(cells
        .into_iter()
        .map(|((method, c, d, x), (hits, n))| ScoreRow { dataset: dataset.to_owned(), method, c, d, x, score: hits as f64 / n as f64, n })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub score: f64,
    pub n: usize,
}

/// Share of probe traces whose returned page is the gold page.
pub fn score_page_probe(traces: &[RunTrace], samples: &[QASample]) -> Result<ProbeScore, EvalError> {
    let samples = index(samples);
    let mut hits = 0;
    for trace in traces {
        let sample = samples.get(trace.sample_id.as_str()).ok_or_else(|| EvalError::MissingSample(trace.sample_id.clone()))?;
        let [gold] = sample.gold_pages.as_slice() else {
            return Err(EvalError::MultiGoldSample(sample.id.clone()));
        };
        if trace.status == TraceStatus::Ok && trace.probe_page == Some(*gold) {
            hits += 1;
        }
    }
    let n = traces.len();
    Ok(ProbeScore { score: if n == 0 { 0.0 } else { hits as f64 / n as f64 }, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    pub d: usize,
    /// Model calls per question.
    pub m: usize,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    /// Completed traces averaged over.
    pub n: usize,
}

/// Calls and mean token usage per (method, d), over traces that did not fail.
pub fn cost_summary(traces: &[RunTrace]) -> Result<Vec<CostRow>, EvalError> {
    let mut groups: BTreeMap<(String, Option<usize>, usize), Vec<&RunTrace>> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.status != TraceStatus::Failed) {
        groups.entry((t.label.clone(), t.c, t.d)).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|((method, c, d), ts)| {
            let counts: BTreeSet<usize> = ts.iter().map(|t| t.m).collect();
            if counts.len() != 1 {
                return Err(EvalError::InconsistentCallCount { label: method, d, counts: counts.into_iter().collect() });
            }
            let n = ts.len();
            let mean = |f: fn(&RunTrace) -> usize| ts.iter().map(|t| f(t)).sum::<usize>() as f64 / n as f64;
            Ok(CostRow {
                method,
                c,
                d,
                m: *counts.first().expect("one count"),
                mean_input_tokens: mean(RunTrace::input_tokens),
                mean_output_tokens: mean(RunTrace::output_tokens),
                n,
            })
        })
        .collect()
}

/// Relative change in mean input tokens of `other` over `base`.
pub fn input_overhead(base: &CostRow, other: &CostRow) -> f64 {
    other.mean_input_tokens / base.mean_input_tokens - 1.0
}

/// Method of the trace label, for grouping chunked runs by method.
pub fn method_of(label: &str) -> Option<Method> {
    Method::ALL.iter().copied().filter(|m| label == m.name() || label.starts_with(&format!("{}-", m.name()))).max_by_key(|m| m.name().len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::PaginatedDocument;
    use crate::pipeline::{CallRecord, Phase, TRACE_SCHEMA_VERSION};

    fn words(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("Paris"), words(&["paris"]));
        assert_eq!(normalize_answer("well-known"), words(&["wellknown"]));
        assert_eq!(normalize_answer("  The  EIFFEL tower! "), words(&["the", "eiffel", "tower"]));
        assert_eq!(normalize_answer("Ünïcode ÉTÉ"), words(&["ünïcode", "été"]));
        assert!(normalize_answer("?!").is_empty());
    }

    #[test]
    fn fuzzy_examples() {
        assert_eq!(fuzzy_match("Paris", "Paris"), 1);
        assert_eq!(fuzzy_match("the Eiffel Tower", "eiffel tower"), 1);
        assert_eq!(fuzzy_match("well-known", "well known"), 0);
        assert_eq!(fuzzy_match("Paris", ""), 0);
        assert_eq!(fuzzy_match("", "Paris"), 0);
        assert_eq!(fuzzy_match("", "!!"), 1);
    }

    fn sample(id: &str, answer: &str, golds: Vec<u32>, x: Option<usize>) -> QASample {
        QASample {
            id: id.into(),
            qid: "q".into(),
            question: "Q?".into(),
            answer: answer.into(),
            gold_pages: golds,
            x,
            d: 40_000,
            document: PaginatedDocument::from_texts(["a", "b", "c"]).unwrap(),
        }
    }

    fn trace(id: &str, answer: Option<&str>, status: TraceStatus, m: usize, x: Option<usize>) -> RunTrace {
        let call = |tokens: usize| {
            let mut c = CallRecord::new(Phase::Qa, None, "p", false);
            c.input_tokens = tokens;
            c.output_tokens = 10;
            c
        };
        RunTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            sample_id: id.into(),
            method: Method::Rr,
            label: "rr".into(),
            c: None,
            d: 40_000,
            x,
            calls: (0..m).map(|i| call(100 * (i + 1))).collect(),
            reminders: 0,
            retrieved_pages: None,
            unknown_pages: vec![],
            malformed_retrievals: 0,
            answer: answer.map(str::to_owned),
            answer_page: None,
            probe_page: answer.and_then(|a| a.parse().ok()),
            m,
            status,
            error: None,
        }
    }

    #[test]
    fn mean_over_samples() {
        let samples = vec![sample("a", "Paris", vec![1], None), sample("b", "Rome", vec![1], None), sample("c", "Oslo", vec![1], None)];
        let traces = vec![
            trace("a", Some("paris"), TraceStatus::Ok, 2, None),
            trace("b", Some("Paris"), TraceStatus::Ok, 2, None),
            trace("c", Some("Oslo"), TraceStatus::Ok, 2, None),
        ];
        let rows = score_traces("nq", &traces, &samples, false).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].score - 0.6667).abs() < 1e-4);
        assert_eq!(rows[0].n, 3);

        let mut reversed = traces.clone();
        reversed.reverse();
        assert_eq!(score_traces("nq", &reversed, &samples, false).unwrap(), rows);

        let broken: Vec<RunTrace> = traces.iter().map(|t| RunTrace { status: TraceStatus::Malformed, ..t.clone() }).collect();
        assert_eq!(score_traces("nq", &broken, &samples, false).unwrap()[0].score, 0.0);

        let orphan = vec![trace("zzz", Some("x"), TraceStatus::Ok, 1, None)];
        assert!(matches!(score_traces("nq", &orphan, &samples, false), Err(EvalError::MissingSample(_))));
    }

    #[test]
    fn position_breakdown_has_one_row_per_x() {
        let xs: Vec<usize> = (0..=4).map(|i| i * 10_000).collect();
        let samples: Vec<QASample> = xs.iter().map(|x| sample(&format!("s{x}"), "A", vec![1], Some(*x))).collect();
        let traces: Vec<RunTrace> = xs.iter().map(|x| trace(&format!("s{x}"), Some("A"), TraceStatus::Ok, 2, Some(*x))).collect();
        let rows = score_traces("nq", &traces, &samples, true).unwrap();
        let by_x: Vec<_> = rows.iter().filter_map(|r| r.x).collect();
        assert_eq!(by_x, xs);
        assert_eq!(rows.iter().filter(|r| r.x.is_none()).count(), 1);
    }

    #[test]
    fn probe_exact_match() {
        let samples = vec![sample("a", "A", vec![7], None), sample("b", "A", vec![8], None)];
        let traces = vec![trace("a", Some("7"), TraceStatus::Ok, 1, None)];
        assert_eq!(score_page_probe(&traces, &samples).unwrap().score, 1.0);
        let traces = vec![trace("b", Some("7"), TraceStatus::Ok, 1, None)];
        assert_eq!(score_page_probe(&traces, &samples).unwrap().score, 0.0);

        let multi = vec![sample("m", "A", vec![1, 2], None)];
        let traces = vec![trace("m", Some("1"), TraceStatus::Ok, 1, None)];
        assert!(matches!(score_page_probe(&traces, &multi), Err(EvalError::MultiGoldSample(_))));
    }

    #[test]
    fn cost_rows() {
        let traces = vec![trace("a", Some("x"), TraceStatus::Ok, 2, None), trace("b", Some("x"), TraceStatus::Ok, 2, None)];
        let rows = cost_summary(&traces).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].m, 2);
        assert_eq!(rows[0].mean_input_tokens, 300.0);
        assert_eq!(rows[0].mean_output_tokens, 20.0);

        let mixed = vec![trace("a", Some("x"), TraceStatus::Ok, 2, None), trace("b", Some("x"), TraceStatus::Ok, 3, None)];
        assert!(matches!(cost_summary(&mixed), Err(EvalError::InconsistentCallCount { .. })));

        let with_failure = vec![trace("a", Some("x"), TraceStatus::Ok, 2, None), trace("b", None, TraceStatus::Failed, 1, None)];
        assert_eq!(cost_summary(&with_failure).unwrap()[0].n, 1);
    }

    #[test]
    fn labels_map_back_to_methods() {
        assert_eq!(method_of("chunked-rr-c10000"), Some(Method::ChunkedRr));
        assert_eq!(method_of("rr"), Some(Method::Rr));
        assert_eq!(method_of("reprompt-tags-only"), Some(Method::Reprompt));
        assert_eq!(method_of("mystery"), None);
    }
}
