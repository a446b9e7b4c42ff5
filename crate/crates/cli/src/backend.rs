use std::sync::Arc;

use rnr_core::corpus::QASample;
use rnr_core::docmodel::SharedCounter;
use rnr_core::llm::{BackendConfig, EchoBackend, LiveClient, ReplayTransport, SharedBackend, SimulatorBackend, TranscriptWriter};

use crate::config::BackendSection;
use crate::error::CliError;

/// Backend factory. Live and replay clients are built once and shared so
/// their rate limits hold across the whole run; the simulator is rebuilt per
/// sample file because it needs the ground truth.
pub struct Backends {
    section: BackendSection,
    counter: SharedCounter,
    shared: Option<SharedBackend>,
    model: String,
}

impl Backends {
    pub fn new(section: &BackendSection, counter: SharedCounter) -> Result<Self, CliError> {
        let load = |path| BackendConfig::load(path).map_err(|e| CliError::Config(e.to_string()));
        let (shared, model): (Option<SharedBackend>, String) = match section {
            BackendSection::Simulator { .. } => (None, "simulator".into()),
            BackendSection::Echo { text } => {
                let echo = text.clone().map(EchoBackend::new).unwrap_or_default();
                (Some(Arc::new(echo)), "echo".into())
            }
            BackendSection::Live { config, transcript } => {
                let config = load(config)?;
                let model = config.model.clone();
                let mut client = LiveClient::from_env(config, counter.clone()).map_err(|e| CliError::Config(e.to_string()))?;
                if let Some(path) = transcript {
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
                    }
                    let writer = TranscriptWriter::append_to(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    client = client.with_transcript(writer);
                }
                (Some(Arc::new(client)), model)
            }
            BackendSection::Replay { config, transcript } => {
                let config = load(config)?;
                let model = config.model.clone();
                let transport =
                    ReplayTransport::open(transcript).map_err(|e| CliError::Config(format!("{}: {e}", transcript.display())))?;
                // Transcripts never hold headers, so the key is irrelevant.
                let client = LiveClient::with_transport(config, transport, String::new(), counter.clone());
                (Some(Arc::new(client)), model)
            }
        };
        Ok(Self { section: section.clone(), counter, shared, model })
    }

    /// Model name sent with every request.
    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn is_simulator(&self) -> bool {
        self.shared.is_none()
    }

    pub fn for_samples(&self, samples: &[QASample]) -> SharedBackend {
        match (&self.shared, self.section.bias_model()) {
            (Some(backend), _) => backend.clone(),
            (None, Some(model)) => Arc::new(SimulatorBackend::new(model, self.counter.clone()).with_samples(samples)),
            (None, None) => unreachable!("non-simulator backends are always built"),
        }
    }
}
