use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CorpusError;
use crate::docmodel::TokenCounter;
use crate::llm::{Backend, CompletionRequest};

/// Accepted abstract length, in tokens, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractBounds {
    pub min: usize,
    pub max: usize,
}

impl Default for AbstractBounds {
    fn default() -> Self {
        Self { min: 150, max: 200 }
    }
}

impl AbstractBounds {
    pub fn check(&self, counter: &dyn TokenCounter, text: &str) -> Result<usize, CorpusError> {
        let tokens = counter.count(text);
        if tokens < self.min || tokens > self.max {
            return Err(CorpusError::AbstractLength { tokens, min: self.min, max: self.max });
        }
        Ok(tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQa {
    pub question: String,
    pub answer: String,
}

/// Prompt asking a model to write one question about `abstract_text`.
pub fn generation_prompt(abstract_text: &str) -> String {
    format!(
        "Below is a scientific abstract. Write a question that can only be answered based on the given abstract. \
The answer must be a single word or a short phrase taken from the abstract.\n\
The question will later be asked about a long document in which this abstract is one of many passages, \
so it must make sense on its own and must identify its subject without referring to \"the abstract\" or \"the passage\".\n\
Do not write questions about the text itself, such as \"What is the first word in the abstract?\".\n\n\
<ABSTRACT>\n{abstract_text}\n</ABSTRACT>\n\n\
Respond with a single JSON object and nothing else, in the form {{\"question\": \"<question>\", \"answer\": \"<answer>\"}}."
    )
}

fn parse_generation(text: &str) -> Result<SyntheticQa, CorpusError> {
    let malformed = |m: &str| CorpusError::MalformedGeneration(m.to_owned());
    let start = text.find('{').ok_or_else(|| malformed("no JSON object in response"))?;
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        _ => return Err(malformed("response is not valid JSON")),
    };
    let object = value.as_object().ok_or_else(|| malformed("response is not a JSON object"))?;
    if object.len() != 2 {
        return Err(malformed("expected exactly the fields question and answer"));
    }
    let field = |name: &str| -> Result<String, CorpusError> {
        match object.get(name) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_owned()),
            Some(_) => Err(CorpusError::MalformedGeneration(format!("field {name} must be a non-empty string"))),
            None => Err(CorpusError::MalformedGeneration(format!("missing field {name}"))),
        }
    };
    Ok(SyntheticQa { question: field("question")?, answer: field("answer")? })
}

/// Asks `backend` for one question/answer pair about an abstract.
pub fn generate_synthetic_qa(
    abstract_text: &str,
    backend: &dyn Backend,
    model: &str,
    counter: &dyn TokenCounter,
    bounds: AbstractBounds,
) -> Result<SyntheticQa, CorpusError> {
    bounds.check(counter, abstract_text)?;
    let request = CompletionRequest::new(generation_prompt(abstract_text), model);
    let result = crate::llm::complete(backend, &request)?;
    parse_generation(&result.text)
}

/// Indices of the abstracts whose length falls within `bounds`.
pub fn select_abstracts(abstracts: &[String], counter: &dyn TokenCounter, bounds: AbstractBounds) -> Vec<usize> {
    abstracts.iter().enumerate().filter(|(_, a)| bounds.check(counter, a).is_ok()).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixture::Vocabulary;
    use crate::docmodel::Cl100kCounter;
    use crate::llm::{EchoBackend, LlmError, ScriptedBackend};

    fn text_of(tokens: usize) -> String {
        let counter = Cl100kCounter::shared();
        let vocab = Vocabulary::new(counter.as_ref());
        let text = vocab.words(7, tokens);
        assert_eq!(counter.count(&text), tokens);
        text
    }

    #[test]
    fn short_abstract_is_rejected() {
        let counter = Cl100kCounter::shared();
        let err = generate_synthetic_qa(&text_of(100), &EchoBackend::default(), "m", counter.as_ref(), AbstractBounds::default());
        assert!(matches!(err, Err(CorpusError::AbstractLength { tokens: 100, min: 150, max: 200 })));
    }

    #[test]
    fn echo_backend_gives_fixture_pair() {
        let counter = Cl100kCounter::shared();
        let qa = generate_synthetic_qa(&text_of(170), &EchoBackend::default(), "m", counter.as_ref(), AbstractBounds::default())
            .unwrap();
        assert_eq!(qa.question, "Which fixture phrase does the echo backend return?");
        assert_eq!(qa.answer, "echo fixture");
    }

    #[test]
    fn schema_is_enforced() {
        assert!(parse_generation(r#"Here: {"question": "Q?", "answer": "A"} done"#).is_ok());
        for bad in [
            "no json",
            r#"{"question": "Q?"}"#,
            r#"{"question": "Q?", "answer": ""}"#,
            r#"{"question": "Q?", "answer": 3}"#,
            r#"{"question": "Q?", "answer": "A", "extra": 1}"#,
            r#"["question", "answer"]"#,
        ] {
            assert!(matches!(parse_generation(bad), Err(CorpusError::MalformedGeneration(_))), "{bad}");
        }
    }

    #[test]
    fn backend_errors_propagate() {
        let counter = Cl100kCounter::shared();
        let backend = ScriptedBackend::new([Err(LlmError::Timeout { attempts: 3 })]);
        let err = generate_synthetic_qa(&text_of(160), &backend, "m", counter.as_ref(), AbstractBounds::default());
        assert!(matches!(err, Err(CorpusError::Backend(LlmError::Timeout { .. }))));
    }

    #[test]
    fn prompt_forbids_meta_questions() {
        let p = generation_prompt("abc");
        assert!(p.contains("What is the first word in the abstract?"));
        assert!(p.contains("single word or a short phrase"));
    }

    #[test]
    fn selection_filters_by_length() {
        let counter = Cl100kCounter::shared();
        let abstracts = vec![text_of(100), text_of(150), text_of(200), text_of(201)];
        assert_eq!(select_abstracts(&abstracts, counter.as_ref(), AbstractBounds::default()), vec![1, 2]);
    }
}
