use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use log::{info, warn};
use rnr_core::corpus::fixture::FixtureSpec;
use rnr_core::corpus::{
    generate_synthetic_qa, load_pool, load_samples, save_pool, save_samples, scatter_samples, select_abstracts, sweep_samples, AbstractBounds,
    CorpusError, Distracter, PassagePool, PoolQuestion, QASample, SweepSpec,
};
use rnr_core::docmodel::TokenCounter;
use rnr_core::eval::{chunk_table, cost_summary, cost_table, format_tokens, position_table, score_page_probe, score_table, score_traces, ScoreRow, Table};
use rnr_core::llm::Backend;
use rnr_core::pipeline::{read_traces, run_batch_with, write_trace, Method, PipelineConfig, ReminderPlan, RunTrace};
use rnr_core::prompt::{TaskKind, TemplateSet};
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::config::{DatasetConfig, DatasetSource, ExperimentConfig};
use crate::error::CliError;

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Number of samples a build should produce.
fn expected_count(dataset: &DatasetConfig, d: usize, step: usize) -> (usize, String) {
    let q = dataset.questions;
    if dataset.source.is_positioned() {
        let n = q * (1 + d / step);
        (n, format!("N = {q} x (1 + {d}/{step}) = {n}"))
    } else {
        (q, format!("N = {q}"))
    }
}

fn fixture_pool(config: &ExperimentConfig, dataset: &DatasetConfig, counter: &dyn TokenCounter) -> Result<PassagePool, CorpusError> {
    let DatasetSource::Fixture { golds, page_text_tokens, distracters } = dataset.source else {
        unreachable!("called for fixture datasets only")
    };
    let max_d = config.d_values.iter().copied().max().unwrap_or(0);
    let spec = FixtureSpec {
        questions: dataset.questions,
        golds_per_question: golds,
        page_text_tokens,
        distracters: distracters.unwrap_or(max_d / page_text_tokens + 8),
        seed: config.seed,
    };
    spec.generate(counter)
}

#[derive(Deserialize)]
struct AbstractRecord {
    text: String,
}

fn read_abstracts(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<AbstractRecord>(l).map(|r| r.text).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

/// Generates one question per abstract until `dataset.questions` succeed.
/// Abstracts not used as golds become the shared distracters.
fn synthetic_pool(
    config: &ExperimentConfig,
    dataset: &DatasetConfig,
    backends: &Backends,
    counter: &dyn TokenCounter,
) -> Result<PassagePool, CliError> {
    let DatasetSource::Synthetic { abstracts, min_tokens, max_tokens } = &dataset.source else {
        unreachable!("called for synthetic datasets only")
    };
    let cache = config.pool_path(&dataset.name);
    if cache.exists() {
        info!("reusing generated pool {}", cache.display());
        return load_pool(&cache).map_err(|e| anyhow!("dataset {}: {e}", dataset.name).into());
    }
    if backends.is_simulator() {
        return Err(CliError::Config(format!("dataset {}: generating questions needs a live, replay or echo backend", dataset.name)));
    }
    let defaults = AbstractBounds::default();
    let bounds = AbstractBounds { min: min_tokens.unwrap_or(defaults.min), max: max_tokens.unwrap_or(defaults.max) };
    let texts = read_abstracts(abstracts)?;
    let eligible = select_abstracts(&texts, counter, bounds);
    let backend = backends.for_samples(&[]);
    let mut used = vec![false; texts.len()];
    let mut questions = Vec::new();
    for i in eligible {
        if questions.len() == dataset.questions {
            break;
        }
        match generate_synthetic_qa(&texts[i], backend.as_ref(), backends.model(), counter, bounds) {
            Ok(qa) => {
                used[i] = true;
                questions.push(PoolQuestion {
                    qid: format!("a{}", i + 1),
                    question: qa.question,
                    answer: qa.answer,
                    golds: vec![texts[i].clone()],
                });
            }
            Err(CorpusError::Backend(e)) if e.is_fatal() => return Err(CliError::Fatal(e.to_string())),
            Err(e) => warn!("dataset {}: abstract {} skipped: {e}", dataset.name, i + 1),
        }
    }
    let distracters = texts
        .iter()
        .zip(&used)
        .filter(|(_, used)| !**used)
        .map(|(text, _)| Distracter { qid: None, text: text.clone(), rank: None })
        .collect();
    let pool = PassagePool { questions, distracters };
    create_parent(&cache)?;
    save_pool(&pool, &cache).map_err(|e| anyhow!("{}: {e}", cache.display()))?;
    Ok(pool)
}

fn dataset_pool(
    config: &ExperimentConfig,
    dataset: &DatasetConfig,
    backends: &dyn Fn() -> Result<Backends, CliError>,
    counter: &dyn TokenCounter,
) -> Result<PassagePool, CliError> {
    let context = |e: CorpusError| CliError::Other(anyhow!("dataset {}: {e}", dataset.name));
    match &dataset.source {
        DatasetSource::Positioned { pool } | DatasetSource::Scattered { pool } => load_pool(pool).map_err(context),
        DatasetSource::Fixture { .. } => fixture_pool(config, dataset, counter).map_err(context),
        DatasetSource::Synthetic { .. } => synthetic_pool(config, dataset, &backends()?, counter),
    }
}

/// Writes sample files for every dataset and d. Returns the counts written.
pub fn build(
    config: &ExperimentConfig,
    backends: &dyn Fn() -> Result<Backends, CliError>,
    counter: &dyn TokenCounter,
) -> Result<Vec<(String, usize, usize)>, CliError> {
    let mut written = Vec::new();
    for dataset in &config.datasets {
        let pool = dataset_pool(config, dataset, backends, counter)?;
        for &d in &config.d_values {
            let context = |e: CorpusError| CliError::Other(anyhow!("dataset {}, d={d}: {e}", dataset.name));
            let samples = if dataset.source.is_positioned() {
                let spec = SweepSpec::new(d, config.position_step, dataset.questions).map_err(context)?;
                sweep_samples(&pool, &spec, counter).map_err(context)?
            } else {
                scatter_samples(&pool, d, dataset.questions, counter).map_err(context)?
            };
            let path = config.samples_path(&dataset.name, d);
            create_parent(&path)?;
            save_samples(&samples, &path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            let (expected, formula) = expected_count(dataset, d, config.position_step);
            println!("{} d={}: {} samples ({formula}) -> {}", dataset.name, format_tokens(d), samples.len(), path.display());
            if samples.len() != expected {
                return Err(anyhow!("dataset {} d={d}: built {} samples, expected {expected}", dataset.name, samples.len()).into());
            }
            written.push((dataset.name.clone(), d, samples.len()));
        }
    }
    Ok(written)
}

fn load_built(config: &ExperimentConfig, dataset: &str, d: usize) -> Result<Vec<QASample>, CliError> {
    let path = config.samples_path(dataset, d);
    if !path.exists() {
        return Err(CliError::Config(format!("{} not found; run `rnr build` first", path.display())));
    }
    load_samples(&path).map_err(|e| anyhow!("{}: {e}", path.display()).into())
}

/// Drops a partially written last line so appends start on a fresh line.
fn trim_partial_line(path: &Path) -> anyhow::Result<()> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    warn!("{}: dropping an incomplete final line", path.display());
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

fn read_trace_file(path: &Path) -> anyhow::Result<Vec<RunTrace>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_traces(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Outcome of one (dataset, method, d) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellRun {
    pub resumed: usize,
    pub ran: usize,
}

/// Runs the samples of one cell that have no trace yet, appending traces in
/// sample order. Traces of fatal failures are not written, so a later run
/// retries them.
fn run_cell(
    pipeline: &PipelineConfig,
    templates: &TemplateSet,
    samples: &[QASample],
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
    parallelism: usize,
    path: &Path,
) -> Result<CellRun, CliError> {
    create_parent(path)?;
    let existing = if path.exists() {
        trim_partial_line(path)?;
        read_trace_file(path)?
    } else {
        Vec::new()
    };
    let done: std::collections::HashSet<&str> = existing.iter().map(|t| t.sample_id.as_str()).collect();
    let pending: Vec<QASample> = samples.iter().filter(|s| !done.contains(s.id.as_str())).cloned().collect();
    let outcome = CellRun { resumed: existing.len(), ran: pending.len() };
    if pending.is_empty() {
        return Ok(outcome);
    }

    let file = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    struct Ordered {
        out: BufWriter<File>,
        next: usize,
        waiting: BTreeMap<usize, RunTrace>,
        error: Option<std::io::Error>,
        fatal: Option<String>,
    }
    let state = Mutex::new(Ordered { out: BufWriter::new(file), next: 0, waiting: BTreeMap::new(), error: None, fatal: None });
    run_batch_with(pipeline, templates, &pending, backend, counter, parallelism, |i, trace| {
        let mut guard = state.lock().expect("trace writer poisoned");
        let s = &mut *guard;
        s.waiting.insert(i, trace.clone());
        while let Some(trace) = s.waiting.remove(&s.next) {
            s.next += 1;
            if trace.is_fatal() {
                s.fatal.get_or_insert_with(|| trace.error.clone().unwrap_or_else(|| "backend failure".into()));
                continue;
            }
            if s.error.is_none() {
                let result = write_trace(&trace, &mut s.out).map_err(|e| std::io::Error::other(e.to_string())).and_then(|_| s.out.flush());
                if let Err(e) = result {
                    s.error = Some(e);
                }
            }
        }
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut s = state.into_inner().expect("trace writer poisoned");
    s.out.flush().with_context(|| format!("writing {}", path.display()))?;
    if let Some(e) = s.error {
        return Err(anyhow!("writing {}: {e}", path.display()).into());
    }
    if let Some(message) = s.fatal {
        return Err(CliError::Fatal(format!("{} on {}: {message}", pipeline.label(), path.display())));
    }
    Ok(outcome)
}

fn run_cells(
    config: &ExperimentConfig,
    pipelines: &[PipelineConfig],
    datasets: &[&DatasetConfig],
    backends: &Backends,
    templates: &TemplateSet,
    counter: &dyn TokenCounter,
) -> Result<Vec<CellRun>, CliError> {
    let mut outcomes = Vec::new();
    for dataset in datasets {
        for &d in &config.d_values {
            let samples = load_built(config, &dataset.name, d)?;
            let backend = backends.for_samples(&samples);
            for pipeline in pipelines {
                let path = config.trace_path(&dataset.name, &pipeline.label(), d);
                let outcome = run_cell(pipeline, templates, &samples, backend.as_ref(), counter, config.parallelism, &path)?;
                println!(
                    "{} {} d={}: {} run, {} already done -> {}",
                    dataset.name,
                    pipeline.label(),
                    format_tokens(d),
                    outcome.ran,
                    outcome.resumed,
                    path.display()
                );
                outcomes.push(outcome);
            }
        }
    }
    Ok(outcomes)
}

fn templates(config: &ExperimentConfig) -> Result<TemplateSet, CliError> {
    match &config.templates {
        Some(dir) => TemplateSet::with_overrides(dir).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(TemplateSet::builtin().clone()),
    }
}

fn with_model(pipelines: Vec<PipelineConfig>, backends: &Backends) -> Vec<PipelineConfig> {
    pipelines.into_iter().map(|p| PipelineConfig { model: backends.model().to_owned(), ..p }).collect()
}

/// Runs every configured method on every built sample file.
pub fn run(config: &ExperimentConfig, backends: &Backends, counter: &dyn TokenCounter) -> Result<Vec<CellRun>, CliError> {
    let pipelines = with_model(config.pipeline_configs()?, backends);
    if pipelines.is_empty() {
        return Err(CliError::Config("no methods configured".into()));
    }
    let datasets: Vec<&DatasetConfig> = config.datasets.iter().collect();
    run_cells(config, &pipelines, &datasets, backends, &templates(config)?, counter)
}

/// Where a table cell's numbers come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSource {
    pub row: String,
    pub column: String,
    pub traces: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub dataset: String,
    pub table: String,
    pub csv: String,
    pub markdown: String,
    pub cells: Vec<CellSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tables: Vec<TableEntry>,
}

struct Reporter<'a> {
    config: &'a ExperimentConfig,
    manifest: Manifest,
}

impl Reporter<'_> {
    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.config.output_dir).unwrap_or(path).to_string_lossy().into_owned()
    }

    fn emit(&mut self, dataset: &str, name: &str, table: &Table, cells: Vec<CellSource>) -> anyhow::Result<()> {
        let dir = self.config.reports_dir().join(dataset);
        fs::create_dir_all(&dir)?;
        let csv = dir.join(format!("{name}.csv"));
        let markdown = dir.join(format!("{name}.md"));
        fs::write(&csv, table.to_csv()?)?;
        fs::write(&markdown, table.to_markdown())?;
        println!("{dataset} {name}:\n{}", table.to_markdown());
        self.manifest.tables.push(TableEntry {
            dataset: dataset.to_owned(),
            table: name.to_owned(),
            csv: self.relative(&csv),
            markdown: self.relative(&markdown),
            cells,
        });
        Ok(())
    }

    fn finish(self, file: &str) -> anyhow::Result<PathBuf> {
        let path = self.config.reports_dir().join(file);
        fs::create_dir_all(self.config.reports_dir())?;
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(path)
    }
}

/// Traces of one cell, or `MissingTraces` when the file is absent or empty.
fn cell_traces(config: &ExperimentConfig, dataset: &str, label: &str, d: usize) -> Result<(PathBuf, Vec<RunTrace>), CliError> {
    let path = config.trace_path(dataset, label, d);
    let missing = || CliError::MissingTraces { dataset: dataset.to_owned(), label: label.to_owned(), d, path: path.clone() };
    if !path.exists() {
        return Err(missing());
    }
    let traces = read_trace_file(&path)?;
    if traces.is_empty() {
        return Err(missing());
    }
    Ok((path, traces))
}

/// Score, chunk, position and cost tables per dataset, plus a manifest
/// naming the trace file behind every cell.
pub fn report(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let pipelines = config.pipeline_configs()?;
    if pipelines.is_empty() {
        return Err(CliError::Config("no methods configured".into()));
    }
    let mut reporter = Reporter { config, manifest: Manifest::default() };
    for dataset in &config.datasets {
        let name = dataset.name.as_str();
        let mut rows: Vec<ScoreRow> = Vec::new();
        let mut all_traces: Vec<RunTrace> = Vec::new();
        let mut sources: BTreeMap<(String, usize), String> = BTreeMap::new();
        for &d in &config.d_values {
            let samples = load_built(config, name, d)?;
            for pipeline in &pipelines {
                let label = pipeline.label();
                let (path, traces) = cell_traces(config, name, &label, d)?;
                if traces.len() < samples.len() {
                    warn!("{}: {} of {} samples have traces", path.display(), traces.len(), samples.len());
                }
                if pipeline.method != Method::PageProbe {
                    rows.extend(
                        score_traces(name, &traces, &samples, dataset.source.is_positioned()).map_err(|e| anyhow!("{}: {e}", path.display()))?,
                    );
                }
                sources.insert((label, d), reporter.relative(&path));
                all_traces.extend(traces);
            }
        }
        let source = |label: &str, d: usize| sources.get(&(label.to_owned(), d)).cloned().unwrap_or_default();

        let plain: Vec<&ScoreRow> = rows.iter().filter(|r| r.x.is_none() && r.c.is_none()).collect();
        if !plain.is_empty() {
            let cells = plain.iter().map(|r| CellSource { row: r.method.clone(), column: format_tokens(r.d), traces: source(&r.method, r.d) }).collect();
            reporter.emit(name, "scores", &score_table(&rows), cells)?;
        }
        let chunked: Vec<&ScoreRow> = rows.iter().filter(|r| r.x.is_none() && r.c.is_some()).collect();
        if !chunked.is_empty() {
            let cells = chunked
                .iter()
                .map(|r| {
                    let c = r.c.expect("filtered");
                    CellSource {
                        row: format!("{} {}", format_tokens(r.d), format_tokens(c)),
                        column: r.method.replace(&format!("-c{c}"), ""),
                        traces: source(&r.method, r.d),
                    }
                })
                .collect();
            reporter.emit(name, "chunks", &chunk_table(&rows), cells)?;
        }
        for &d in &config.d_values {
            let positioned: Vec<&ScoreRow> = rows.iter().filter(|r| r.d == d && r.x.is_some()).collect();
            if positioned.is_empty() {
                continue;
            }
            let cells = positioned
                .iter()
                .map(|r| CellSource { row: r.method.clone(), column: format_tokens(r.x.expect("filtered")), traces: source(&r.method, r.d) })
                .collect();
            reporter.emit(name, &format!("positions-d{d}"), &position_table(&rows, d), cells)?;
        }
        let costs = cost_summary(&all_traces).map_err(|e| anyhow!("dataset {name}: {e}"))?;
        let cells = costs.iter().map(|r| CellSource { row: r.method.clone(), column: format_tokens(r.d), traces: source(&r.method, r.d) }).collect();
        reporter.emit(name, "costs", &cost_table(&costs), cells)?;
    }
    Ok(reporter.finish("manifest.json")?)
}

/// Direct answering without a page field, next to single-page retrieval.
fn probe_pipelines(backends: &Backends) -> Vec<PipelineConfig> {
    let answer = PipelineConfig { qa_kind: TaskKind::Qa, ..PipelineConfig::new(Method::Baseline).with_reminders(ReminderPlan::None) };
    with_model(vec![answer, PipelineConfig::new(Method::PageProbe).with_reminders(ReminderPlan::None)], backends)
}

/// Runs the page probe and direct answering on single-gold datasets and
/// writes a table of both scores per dataset and d.
pub fn probe(config: &ExperimentConfig, backends: &Backends, counter: &dyn TokenCounter) -> Result<PathBuf, CliError> {
    let datasets: Vec<&DatasetConfig> = config.datasets.iter().filter(|d| d.source.is_positioned()).collect();
    for skipped in config.datasets.iter().filter(|d| !d.source.is_positioned()) {
        println!("{}: skipped, the probe needs a single gold page", skipped.name);
    }
    if datasets.is_empty() {
        return Err(CliError::Config("no single-gold dataset to probe".into()));
    }
    let pipelines = probe_pipelines(backends);
    run_cells(config, &pipelines, &datasets, backends, &templates(config)?, counter)?;

    let [answer, page] = [pipelines[0].label(), pipelines[1].label()];
    let mut table = Table { headers: ["dataset", "d", "answer", "page", "n"].map(String::from).to_vec(), rows: Vec::new() };
    let mut cells = Vec::new();
    let mut reporter = Reporter { config, manifest: Manifest::default() };
    for dataset in &datasets {
        for &d in &config.d_values {
            let samples = load_built(config, &dataset.name, d)?;
            let (answer_path, answer_traces) = cell_traces(config, &dataset.name, &answer, d)?;
            let (page_path, page_traces) = cell_traces(config, &dataset.name, &page, d)?;
            let answered = score_traces(&dataset.name, &answer_traces, &samples, false).map_err(|e| anyhow!("{e}"))?;
            let answer_score = answered.first().map_or(0.0, |r| r.score);
            let paged = score_page_probe(&page_traces, &samples).map_err(|e| anyhow!("{e}"))?;
            let row = format!("{} {}", dataset.name, format_tokens(d));
            table.rows.push(vec![
                dataset.name.clone(),
                format_tokens(d),
                format!("{:.1}", answer_score * 100.0),
                format!("{:.1}", paged.score * 100.0),
                paged.n.to_string(),
            ]);
            cells.push(CellSource { row: row.clone(), column: "answer".into(), traces: reporter.relative(&answer_path) });
            cells.push(CellSource { row, column: "page".into(), traces: reporter.relative(&page_path) });
        }
    }
    reporter.emit("all", "probe", &table, cells)?;
    Ok(reporter.finish("probe-manifest.json")?)
}

