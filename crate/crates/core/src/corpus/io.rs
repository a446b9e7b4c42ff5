use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Distracter, PassagePool, PoolQuestion, QASample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PassageKind {
    Gold,
    Distracter,
}

/// One line of a passage pool file.
#[derive(Debug, Serialize, Deserialize)]
struct PoolRecord {
    kind: PassageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qid: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
}

fn schema(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema { line, message: message.into() }
}

/// Reads a passage pool. Gold lines carry `qid`, `question` and `answer`;
/// several gold lines with one `qid` form a multi-gold question.
pub fn read_pool<R: BufRead>(input: R) -> Result<PassagePool, CorpusError> {
    let mut pool = PassagePool::default();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PoolRecord = serde_json::from_str(&line).map_err(|e| schema(line_no, e.to_string()))?;
        if record.text.is_empty() {
            return Err(schema(line_no, "empty passage text"));
        }
        match record.kind {
            PassageKind::Distracter => pool.distracters.push(Distracter { qid: record.qid, text: record.text, rank: record.rank }),
            PassageKind::Gold => {
                let qid = record.qid.ok_or_else(|| schema(line_no, "gold passage without \"qid\""))?;
                let question = record.question.ok_or_else(|| schema(line_no, "gold passage without \"question\""))?;
                let answer = record.answer.ok_or_else(|| schema(line_no, "gold passage without \"answer\""))?;
                match pool.questions.iter_mut().find(|q| q.qid == qid) {
                    Some(existing) => {
                        if existing.question != question || existing.answer != answer {
                            return Err(schema(line_no, format!("question {qid} repeated with a different question or answer")));
                        }
                        existing.golds.push(record.text);
                    }
                    None => pool.questions.push(PoolQuestion { qid, question, answer, golds: vec![record.text] }),
                }
            }
        }
    }
    Ok(pool)
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<PassagePool, CorpusError> {
    read_pool(BufReader::new(File::open(path)?))
}

/// Writes a pool in the format [`read_pool`] accepts.
pub fn write_pool<W: Write>(pool: &PassagePool, mut out: W) -> Result<(), CorpusError> {
    for q in &pool.questions {
        for gold in &q.golds {
            let record = PoolRecord {
                kind: PassageKind::Gold,
                qid: Some(q.qid.clone()),
                text: gold.clone(),
                rank: None,
                question: Some(q.question.clone()),
                answer: Some(q.answer.clone()),
            };
            serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    for d in &pool.distracters {
        let record = PoolRecord {
            kind: PassageKind::Distracter,
            qid: d.qid.clone(),
            text: d.text.clone(),
            rank: d.rank,
            question: None,
            answer: None,
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_pool(pool: &PassagePool, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_pool(pool, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_samples<W: Write>(samples: &[QASample], mut out: W) -> Result<(), CorpusError> {
    for sample in samples {
        serde_json::to_writer(&mut out, sample).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_samples(samples: &[QASample], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_samples(samples, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<QASample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: QASample = serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?;
        sample.validate().map_err(|m| schema(i + 1, m))?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<QASample>, CorpusError> {
    read_samples(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixture::FixtureSpec;
    use crate::corpus::{sweep_samples, SweepSpec};
    use crate::docmodel::Cl100kCounter;

    #[test]
    fn empty_file_is_an_empty_pool() {
        assert!(read_pool(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn missing_answer_is_reported_with_its_line() {
        let text = concat!(
            r#"{"kind":"distracter","text":"filler"}"#,
            "\n",
            r#"{"kind":"gold","qid":"q1","text":"gold","question":"Q?"}"#,
            "\n"
        );
        match read_pool(text.as_bytes()) {
            Err(CorpusError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("answer"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gold_rows_group_by_question() {
        let text = concat!(
            r#"{"kind":"gold","qid":"h1","text":"first","question":"Q?","answer":"A"}"#,
            "\n",
            r#"{"kind":"distracter","qid":"h1","text":"own","rank":1}"#,
            "\n",
            r#"{"kind":"gold","qid":"h1","text":"second","question":"Q?","answer":"A"}"#,
            "\n",
        );
        let pool = read_pool(text.as_bytes()).unwrap();
        assert_eq!(pool.questions.len(), 1);
        assert_eq!(pool.questions[0].golds, vec!["first", "second"]);
        assert_eq!(pool.distracters[0].rank, Some(1));

        let bad = text.replace(r#""answer":"A"}"#, r#""answer":"B"}"#).replacen(r#""answer":"B"}"#, r#""answer":"A"}"#, 1);
        assert!(matches!(read_pool(bad.as_bytes()), Err(CorpusError::Schema { line: 3, .. })));
    }

    #[test]
    fn pool_and_samples_round_trip() {
        let counter = Cl100kCounter::shared();
        let pool = FixtureSpec { questions: 1, golds_per_question: 1, page_text_tokens: 40, distracters: 80, seed: 3 }
            .generate(counter.as_ref())
            .unwrap();
        let mut buf = Vec::new();
        write_pool(&pool, &mut buf).unwrap();
        assert_eq!(read_pool(buf.as_slice()).unwrap(), pool);

        let samples = sweep_samples(&pool, &SweepSpec::new(2_000, 1_000, 1).unwrap(), counter.as_ref()).unwrap();
        assert_eq!(samples.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        save_samples(&samples, &path).unwrap();
        assert_eq!(load_samples(&path).unwrap(), samples);
    }

    #[test]
    fn samples_with_dangling_gold_pages_are_rejected() {
        let line = r#"{"id":"s","qid":"q","question":"Q?","answer":"A","gold_pages":[3],"d":10,"pages":[{"id":1,"text":"x"}]}"#;
        assert!(matches!(read_samples(line.as_bytes()), Err(CorpusError::Schema { line: 1, .. })));
    }
}
