use rnr_core::corpus::fixture::FixtureSpec;
use rnr_core::corpus::{read_samples, sweep_samples, write_samples, QASample, SweepSpec};
use rnr_core::docmodel::{Cl100kCounter, SharedCounter};
use rnr_core::eval::{cost_summary, score_page_probe, score_traces};
use rnr_core::llm::{BiasModel, SimulatorBackend};
use rnr_core::pipeline::{read_traces, run_batch, write_trace, Method, PipelineConfig, RunTrace};

fn setup() -> (SharedCounter, Vec<QASample>) {
    let counter = Cl100kCounter::shared();
    let pool = FixtureSpec { questions: 2, golds_per_question: 1, page_text_tokens: 188, distracters: 120, seed: 3 }
        .generate(counter.as_ref())
        .unwrap();
    let samples = sweep_samples(&pool, &SweepSpec::new(20_000, 10_000, 2).unwrap(), counter.as_ref()).unwrap();
    (counter, samples)
}

fn run(config: &PipelineConfig, samples: &[QASample], counter: &SharedCounter, window: usize) -> Vec<RunTrace> {
    let backend = SimulatorBackend::new(BiasModel::new(window), counter.clone()).with_samples(samples);
    run_batch(config, samples, &backend, counter.as_ref(), 2).unwrap()
}

#[test]
fn every_method_answers_when_the_whole_prompt_is_visible() {
    let (counter, samples) = setup();
    assert_eq!(samples.len(), 6);
    for method in [Method::Baseline, Method::Reprompt, Method::Icr, Method::Rr] {
        let traces = run(&PipelineConfig::new(method), &samples, &counter, 1_000_000);
        let rows = score_traces("fx", &traces, &samples, false).unwrap();
        assert_eq!((rows[0].score, rows[0].n), (1.0, 6), "{method}");
    }
    for method in [Method::ChunkedIcr, Method::ChunkedRr] {
        let traces = run(&PipelineConfig::chunked(method, 10_000), &samples, &counter, 1_000_000);
        assert!(traces.iter().all(|t| t.m == 3), "{method}");
        let rows = score_traces("fx", &traces, &samples, false).unwrap();
        assert_eq!(rows[0].score, 1.0, "{method}");
    }
}

#[test]
fn page_probe_finds_the_gold_page() {
    let (counter, samples) = setup();
    let traces = run(&PipelineConfig::new(Method::PageProbe), &samples, &counter, 1_000_000);
    let probe = score_page_probe(&traces, &samples).unwrap();
    assert_eq!((probe.score, probe.n), (1.0, 6));
}

#[test]
fn reminders_only_add_input_tokens() {
    let (counter, samples) = setup();
    let base = cost_summary(&run(&PipelineConfig::new(Method::Baseline), &samples, &counter, 1_000_000)).unwrap();
    let with = cost_summary(&run(&PipelineConfig::new(Method::Reprompt), &samples, &counter, 1_000_000)).unwrap();
    assert!(with[0].mean_input_tokens > base[0].mean_input_tokens);
    assert_eq!(with[0].mean_output_tokens, base[0].mean_output_tokens);
}

#[test]
fn samples_and_traces_survive_jsonl() {
    let (counter, samples) = setup();
    let mut buf = Vec::new();
    write_samples(&samples, &mut buf).unwrap();
    let back = read_samples(buf.as_slice()).unwrap();
    assert_eq!(back.len(), samples.len());
    assert!(back.iter().zip(&samples).all(|(a, b)| a.id == b.id && a.document == b.document));

    let traces = run(&PipelineConfig::new(Method::Rr), &back, &counter, 5_000);
    let mut buf = Vec::new();
    for trace in &traces {
        write_trace(trace, &mut buf).unwrap();
    }
    assert_eq!(read_traces(buf.as_slice()).unwrap(), traces);
}
