mod support;

use std::path::Path;

use ehragent::eval::{evaluate, load_dataset, trace_id, EvalOptions, EvalReport};
use ehragent::llm::{ChatBackend, LlmConfig, RecordingBackend, ReplayBackend};
use ehragent::memory::MemoryStore;
use ehragent::orchestrator::{AgentConfig, QueryResult};

use support::{demo_agent, demo_dir, ScriptedBackend, ADVERSARIAL_Q};

fn run_eval(llm: &dyn ChatBackend, trace: Option<String>) -> (EvalReport, Vec<QueryResult>) {
    let dir = tempfile::tempdir().unwrap();
    let store = MemoryStore::open(dir.path().join("memory.jsonl")).unwrap();
    let agent = demo_agent(AgentConfig::default());
    let dataset = load_dataset(&demo_dir().join("dataset.jsonl")).unwrap();
    let opts = EvalOptions {
        model: LlmConfig::default().model,
        trace_id: trace,
        ..EvalOptions::default()
    };
    evaluate(&agent, &store, llm, &dataset, &opts).unwrap()
}

fn record_dataset(path: &Path) -> EvalReport {
    let rec = RecordingBackend::new(ScriptedBackend::new(), path).unwrap();
    run_eval(&rec, None).0
}

fn record_adversarial(path: &Path) {
    let rec = RecordingBackend::new(ScriptedBackend::new(), path).unwrap();
    for debug in [true, false] {
        let dir = tempfile::tempdir().unwrap();
        let store = MemoryStore::open(dir.path().join("memory.jsonl")).unwrap();
        let mut cfg = AgentConfig::default();
        cfg.ablations.debug = debug;
        demo_agent(cfg).run_query(&store, &rec, ADVERSARIAL_Q);
    }
}

fn replayed_report(trace: &Path) -> EvalReport {
    let bytes = std::fs::read(trace).unwrap();
    let replay = ReplayBackend::load(trace).unwrap();
    run_eval(&replay, Some(trace_id(&bytes))).0
}

/// Rewrites the committed traces and expected report from the scripted
/// model. Run with `cargo test --test replay -- --ignored` after changing
/// any prompt text.
#[test]
#[ignore]
fn regenerate_fixtures() {
    let d = demo_dir();
    for f in ["trace.jsonl", "adversarial_trace.jsonl"] {
        let _ = std::fs::remove_file(d.join(f));
    }
    record_dataset(&d.join("trace.jsonl"));
    record_adversarial(&d.join("adversarial_trace.jsonl"));
    let report = replayed_report(&d.join("trace.jsonl"));
    std::fs::write(d.join("expected_report.json"), report.to_json_pretty()).unwrap();
    print!("{}", report.text_table());
}

#[test]
fn committed_traces_match_the_script() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("trace.jsonl");
    let scripted = record_dataset(&fresh);
    let committed = std::fs::read_to_string(demo_dir().join("trace.jsonl")).unwrap();
    assert!(committed == std::fs::read_to_string(&fresh).unwrap(), "trace.jsonl is stale; regenerate the fixtures");
    let adv = dir.path().join("adversarial_trace.jsonl");
    record_adversarial(&adv);
    let committed = std::fs::read_to_string(demo_dir().join("adversarial_trace.jsonl")).unwrap();
    assert!(committed == std::fs::read_to_string(&adv).unwrap(), "adversarial_trace.jsonl is stale");
    let replayed = replayed_report(&demo_dir().join("trace.jsonl"));
    assert_eq!(scripted.items, replayed.items);
    assert_eq!(scripted.overall, replayed.overall);
}

#[test]
fn replayed_results_are_stable() {
    let trace = demo_dir().join("trace.jsonl");
    let replay = ReplayBackend::load(&trace).unwrap();
    let (_, a) = run_eval(&replay, None);
    let (_, b) = run_eval(&replay, None);
    let a: Vec<String> = a.iter().map(QueryResult::canonical_json).collect();
    let b: Vec<String> = b.iter().map(QueryResult::canonical_json).collect();
    assert_eq!(a, b);
}
