use serde_json::{Map, Value};

use super::PipelineError;
use crate::prompt::TaskKind;

/// JSON objects embedded in `text`, in order of their opening brace.
fn objects(text: &str) -> impl Iterator<Item = Map<String, Value>> + '_ {
    text.match_indices('{').filter_map(move |(at, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[at..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn page_number(value: &Value) -> Option<u32> {
    match value {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn answer_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Extracts the answer (and page, when present) from the first JSON object
/// matching the schema of `kind`.
pub fn parse_qa_response(text: &str, kind: TaskKind) -> Result<(String, Option<u32>), PipelineError> {
    for map in objects(text) {
        let Some(answer) = map.get("answer").and_then(answer_text) else { continue };
        let page = map.get("page").and_then(page_number);
        match kind {
            TaskKind::QaWithPage if page.is_none() => continue,
            _ => return Ok((answer, page)),
        }
    }
    Err(PipelineError::MalformedResponse(format!("no {} object found", kind_label(kind))))
}

/// Extracts the page list from the first `{"pages": [...]}` object, dropping
/// repeats and keeping at most `k` entries.
pub fn parse_retrieval_response(text: &str, k: usize) -> Result<Vec<u32>, PipelineError> {
    for map in objects(text) {
        let Some(Value::Array(items)) = map.get("pages") else { continue };
        let Some(ids) = items.iter().map(page_number).collect::<Option<Vec<u32>>>() else { continue };
        let mut out = Vec::with_capacity(k);
        for id in ids {
            if out.len() == k {
                break;
            }
            if !out.contains(&id) {
                out.push(id);
            }
        }
        return Ok(out);
    }
    Err(PipelineError::MalformedResponse("no pages object found".into()))
}

fn kind_label(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Qa => "answer",
        TaskKind::QaWithPage => "answer/page",
        TaskKind::Retrieval | TaskKind::PageProbe => "pages",
    }
}
