use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use log::error;
use serde::{Deserialize, Serialize};

use super::live::{HttpRequest, HttpResponse, Transport, TransportError};

/// One request/response exchange. Headers are never logged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: String,
    pub status: u16,
    pub response: String,
}

/// Appends exchanges to a JSONL transcript.
pub struct TranscriptWriter {
    out: Mutex<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for TranscriptWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TranscriptWriter")
    }
}

impl TranscriptWriter {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self { out: Mutex::new(Box::new(out)) }
    }

    pub fn append_to(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(file))
    }

    pub fn record(&self, request_body: &str, response: &HttpResponse) {
        let entry = TranscriptEntry { request: request_body.to_owned(), status: response.status, response: response.body.clone() };
        let mut line = serde_json::to_string(&entry).expect("transcript entries serialize");
        line.push('\n');
        let mut out = self.out.lock().expect("transcript poisoned");
        if let Err(e) = out.write_all(line.as_bytes()).and_then(|_| out.flush()) {
            error!("failed to write transcript entry: {e}");
        }
    }
}

/// Serves recorded responses keyed by exact request body. Repeated requests
/// are answered in recording order; the last answer repeats once exhausted.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    entries: Mutex<HashMap<String, VecDeque<HttpResponse>>>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<HttpResponse>> = HashMap::new();
        for e in entries {
            map.entry(e.request).or_default().push_back(HttpResponse { status: e.status, body: e.response });
        }
        Self { entries: Mutex::new(map) }
    }

    pub fn from_reader<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("transcript line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &HttpRequest, _timeout: Duration) -> Result<HttpResponse, TransportError> {
        let mut entries = self.entries.lock().expect("replay poisoned");
        let queue = entries
            .get_mut(&request.body)
            .ok_or_else(|| TransportError::Fatal("request not found in transcript".into()))?;
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            queue.front().cloned().ok_or_else(|| TransportError::Fatal("transcript entry exhausted".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Default)]
    struct Shared(std::sync::Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn req(body: &str) -> HttpRequest {
        HttpRequest { url: "u".into(), headers: vec![], body: body.into() }
    }

    #[test]
    fn recorded_exchanges_replay_in_order() {
        let sink = Shared::default();
        let writer = TranscriptWriter::new(sink.clone());
        writer.record("a", &HttpResponse { status: 429, body: "later".into() });
        writer.record("a", &HttpResponse { status: 200, body: "first".into() });
        writer.record("b", &HttpResponse { status: 200, body: "{\"x\": \"ü\"}".into() });

        let bytes = sink.0.lock().unwrap().clone();
        let replay = ReplayTransport::from_reader(bytes.as_slice()).unwrap();
        let t = Duration::from_secs(1);
        assert_eq!(replay.send(&req("a"), t).unwrap().status, 429);
        assert_eq!(replay.send(&req("a"), t).unwrap().body, "first");
        assert_eq!(replay.send(&req("a"), t).unwrap().body, "first");
        assert_eq!(replay.send(&req("b"), t).unwrap().body, "{\"x\": \"ü\"}");
        assert!(matches!(replay.send(&req("c"), t), Err(TransportError::Fatal(_))));
    }
}
