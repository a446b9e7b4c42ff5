use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rnr_core::llm::{BiasModel, WrongAnswerPolicy};
use rnr_core::pipeline::{Method, PipelineConfig, ReminderPlan};
use rnr_core::prompt::TaskKind;
use serde::Deserialize;

use crate::error::CliError;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_step() -> usize {
    10_000
}

fn default_parallelism() -> usize {
    4
}

fn default_questions() -> usize {
    50
}

fn default_window() -> usize {
    5_000
}

/// One experiment: datasets, methods, document lengths and a backend.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub d_values: Vec<usize>,
    #[serde(default = "default_step")]
    pub position_step: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Seed for generated fixture pools.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_prompts: bool,
    /// Directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSection,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub methods: Vec<MethodEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSection {
    Simulator {
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default)]
        wrong_answer: WrongAnswerPolicy,
    },
    Live {
        config: PathBuf,
        /// Where to append raw exchanges for later replay.
        #[serde(default)]
        transcript: Option<PathBuf>,
    },
    Replay {
        config: PathBuf,
        transcript: PathBuf,
    },
    Echo {
        #[serde(default)]
        text: Option<String>,
    },
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection::Simulator { window: default_window(), wrong_answer: WrongAnswerPolicy::default() }
    }
}

impl BackendSection {
    pub fn simulator(window: usize) -> Self {
        BackendSection::Simulator { window, wrong_answer: WrongAnswerPolicy::default() }
    }

    pub fn bias_model(&self) -> Option<BiasModel> {
        match self {
            BackendSection::Simulator { window, wrong_answer } => Some(BiasModel { window: *window, wrong_answer: *wrong_answer }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default = "default_questions")]
    pub questions: usize,
    #[serde(flatten)]
    pub source: DatasetSource,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// One gold passage per question, swept over answer positions.
    Positioned { pool: PathBuf },
    /// Several gold passages per question, evenly spaced.
    Scattered { pool: PathBuf },
    /// Questions generated from abstracts by the configured backend.
    Synthetic {
        abstracts: PathBuf,
        #[serde(default)]
        min_tokens: Option<usize>,
        #[serde(default)]
        max_tokens: Option<usize>,
    },
    /// A generated pool, seeded by the top-level `seed`.
    Fixture {
        #[serde(default = "one")]
        golds: usize,
        #[serde(default = "fixture_page_tokens")]
        page_text_tokens: usize,
        #[serde(default)]
        distracters: Option<usize>,
    },
}

fn one() -> usize {
    1
}

fn fixture_page_tokens() -> usize {
    188
}

impl DatasetSource {
    /// True when samples carry an answer position.
    pub fn is_positioned(&self) -> bool {
        match self {
            DatasetSource::Positioned { .. } | DatasetSource::Synthetic { .. } => true,
            DatasetSource::Scattered { .. } => false,
            DatasetSource::Fixture { golds, .. } => *golds <= 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

/// A method with its settings. A list of chunk sizes expands to one run per
/// size.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: String,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub c: Option<Sizes>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub qa_kind: Option<TaskKind>,
}

impl MethodEntry {
    pub fn named(method: &str) -> Self {
        Self { method: method.to_owned(), r: None, k: None, c: None, strategy: None, qa_kind: None }
    }

    pub fn expand(&self) -> Result<Vec<PipelineConfig>, CliError> {
        let method: Method = self.method.parse().map_err(config_error)?;
        let mut base = PipelineConfig::new(method);
        if let Some(r) = self.r {
            base.r = r;
        }
        if let Some(k) = self.k {
            base.k = k;
        }
        if let Some(kind) = self.qa_kind {
            base.qa_kind = kind;
        }
        match &self.strategy {
            Some(s) => base.reminders = s.parse().map_err(config_error)?,
            None if !method.uses_reminders() => base.reminders = ReminderPlan::None,
            None => {}
        }
        let sizes: Vec<Option<usize>> = match &self.c {
            None => vec![None],
            Some(Sizes::One(c)) => vec![Some(*c)],
            Some(Sizes::Many(cs)) if cs.is_empty() => return Err(CliError::Config(format!("{}: empty chunk size list", self.method))),
            Some(Sizes::Many(cs)) => cs.iter().copied().map(Some).collect(),
        };
        sizes
            .into_iter()
            .map(|c| {
                let config = PipelineConfig { c, ..base.clone() };
                config.validate().map_err(config_error)?;
                Ok(config)
            })
            .collect()
    }
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub d_values: Vec<usize>,
    pub position_step: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub record_prompts: bool,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub backend: Option<BackendSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(config_error)
    }

    /// Reads, resolves paths against the file's directory, applies overrides
    /// and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        config.apply(overrides)?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(t) = &mut self.templates {
            fix(t);
        }
        match &mut self.backend {
            BackendSection::Live { config, transcript } => {
                fix(config);
                if let Some(t) = transcript {
                    fix(t);
                }
            }
            BackendSection::Replay { config, transcript } => {
                fix(config);
                fix(transcript);
            }
            BackendSection::Simulator { .. } | BackendSection::Echo { .. } => {}
        }
        for dataset in &mut self.datasets {
            match &mut dataset.source {
                DatasetSource::Positioned { pool } | DatasetSource::Scattered { pool } => fix(pool),
                DatasetSource::Synthetic { abstracts, .. } => fix(abstracts),
                DatasetSource::Fixture { .. } => {}
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if !o.d_values.is_empty() {
            self.d_values = o.d_values.clone();
        }
        if let Some(step) = o.position_step {
            self.position_step = step;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.record_prompts |= o.record_prompts;
        if !o.methods.is_empty() {
            self.methods = o.methods.iter().map(|m| MethodEntry::named(m)).collect();
        }
        if !o.datasets.is_empty() {
            let known: BTreeSet<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
            if let Some(missing) = o.datasets.iter().find(|d| !known.contains(d.as_str())) {
                return Err(CliError::Config(format!("unknown dataset {missing:?}")));
            }
            self.datasets.retain(|d| o.datasets.contains(&d.name));
        }
        if let Some(backend) = &o.backend {
            self.backend = backend.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.d_values.is_empty() {
            return bad("d_values is empty".into());
        }
        if self.position_step == 0 {
            return bad("position_step must be positive".into());
        }
        if let Some(d) = self.d_values.iter().find(|d| **d == 0 || **d % self.position_step != 0) {
            return bad(format!("d={d} is not a positive multiple of position_step={}", self.position_step));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        let mut names = BTreeSet::new();
        for dataset in &self.datasets {
            let name = &dataset.name;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("dataset name {name:?} must be non-empty ASCII letters, digits, '-' or '_'"));
            }
            if !names.insert(name) {
                return bad(format!("dataset {name:?} is listed twice"));
            }
            if dataset.questions == 0 {
                return bad(format!("dataset {name}: questions must be positive"));
            }
            match &dataset.source {
                DatasetSource::Positioned { pool } | DatasetSource::Scattered { pool } => require(pool, name)?,
                DatasetSource::Synthetic { abstracts, .. } => require(abstracts, name)?,
                DatasetSource::Fixture { golds, page_text_tokens, .. } => {
                    if *golds == 0 || *page_text_tokens == 0 {
                        return bad(format!("dataset {name}: golds and page_text_tokens must be positive"));
                    }
                }
            }
        }
        match &self.backend {
            BackendSection::Simulator { window, .. } if *window == 0 => return bad("simulator window must be positive".into()),
            BackendSection::Live { config, .. } => require(config, "backend")?,
            BackendSection::Replay { config, transcript } => {
                require(config, "backend")?;
                require(transcript, "backend")?;
            }
            _ => {}
        }
        if let Some(dir) = &self.templates {
            if !dir.is_dir() {
                return bad(format!("templates directory {} does not exist", dir.display()));
            }
        }
        let mut labels = BTreeSet::new();
        for config in self.pipeline_configs()? {
            if !labels.insert(config.label()) {
                return bad(format!("method settings {} are listed twice", config.label()));
            }
        }
        Ok(())
    }

    /// Every configured method run, with experiment-wide settings applied.
    pub fn pipeline_configs(&self) -> Result<Vec<PipelineConfig>, CliError> {
        let mut out = Vec::new();
        for entry in &self.methods {
            for mut config in entry.expand()? {
                config.record_prompts = self.record_prompts;
                out.push(config);
            }
        }
        Ok(out)
    }

    pub fn samples_path(&self, dataset: &str, d: usize) -> PathBuf {
        self.output_dir.join("samples").join(dataset).join(format!("d{d}.jsonl"))
    }

    pub fn pool_path(&self, dataset: &str) -> PathBuf {
        self.output_dir.join("pools").join(format!("{dataset}.jsonl"))
    }

    pub fn trace_path(&self, dataset: &str, label: &str, d: usize) -> PathBuf {
        self.output_dir.join("traces").join(dataset).join(label).join(format!("d{d}.jsonl"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }
}

fn require(path: &Path, owner: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{owner}: {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        d_values = [10000, 20000]

        [[datasets]]
        name = "fx"
        kind = "fixture"
        questions = 2

        [[methods]]
        method = "chunked-rr"
        c = [5000, 10000]

        [[methods]]
        method = "baseline"
    "#;

    #[test]
    fn parses_and_expands_chunk_sizes() {
        let config = ExperimentConfig::parse(MINIMAL).unwrap();
        config.validate().unwrap();
        let labels: Vec<String> = config.pipeline_configs().unwrap().iter().map(|c| c.label()).collect();
        assert_eq!(labels, vec!["chunked-rr-c5000", "chunked-rr-c10000", "baseline"]);
        assert!(matches!(config.backend, BackendSection::Simulator { window: 5000, .. }));
        assert_eq!(config.position_step, 10_000);
    }

    #[test]
    fn unknown_method_lists_valid_ones() {
        let text = MINIMAL.replace("\"baseline\"", "\"rerank\"");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("rerank") && err.contains("chunked-icr"), "{err}");
    }

    #[test]
    fn d_must_be_a_multiple_of_the_step() {
        let mut config = ExperimentConfig::parse(MINIMAL).unwrap();
        config.d_values = vec![15_000];
        assert!(config.validate().is_err());
    }

    #[test]
    fn missing_pool_is_a_config_error() {
        let text = MINIMAL.replace("kind = \"fixture\"", "kind = \"positioned\"\npool = \"/nonexistent/pool.jsonl\"");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("/nonexistent/pool.jsonl")));
    }

    #[test]
    fn overrides_replace_keys() {
        let mut config = ExperimentConfig::parse(MINIMAL).unwrap();
        let o = Overrides { d_values: vec![40_000], parallelism: Some(1), methods: vec!["icr".into()], ..Default::default() };
        config.apply(&o).unwrap();
        assert_eq!(config.d_values, vec![40_000]);
        assert_eq!(config.parallelism, 1);
        assert_eq!(config.pipeline_configs().unwrap()[0].label(), "icr");
    }

    #[test]
    fn reminder_free_methods_default_to_no_strategy() {
        let config = MethodEntry::named("icr").expand().unwrap();
        assert_eq!(config[0].reminders, ReminderPlan::None);
        assert!(MethodEntry { strategy: Some("none".into()), ..MethodEntry::named("rr") }.expand().is_err());
        let tags = MethodEntry { strategy: Some("tags-only".into()), ..MethodEntry::named("reprompt") }.expand().unwrap();
        assert_eq!(tags[0].label(), "reprompt-tags-only");
    }
}
