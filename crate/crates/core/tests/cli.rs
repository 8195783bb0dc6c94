mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use support::demo_dir;

/// A config in `dir` pointing at the demo fixtures with a private memory file.
fn config(dir: &Path) -> PathBuf {
    let d = demo_dir();
    let cfg = serde_json::json!({
        "paths": {
            "tables": d.join("tables"),
            "metadata": d.join("metadata.json"),
            "memory": dir.join("memory.jsonl"),
            "demos": d.join("demos.json"),
            "knowledge_demos": d.join("knowledge_demos.json"),
            "replay": d.join("trace.jsonl"),
        },
        "sandbox": {"command": [env!("CARGO_BIN_EXE_ehragent-sandbox-stub")]},
    });
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn ehragent(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehragent"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ask_prints_the_answer_and_remembers_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = ehragent(&cfg, &["ask", "how many patients are female?"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "ANSWER: 2\n");
    let listed = ehragent(&cfg, &["memory", "list"]);
    assert!(stdout(&listed).contains("how many patients are female?"));
}

#[test]
fn unanswerable_ask_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ehragent(&config(dir.path()), &["ask", "a question nobody recorded"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("UNSOLVED: "));
}

#[test]
fn eval_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let results = dir.path().join("results.jsonl");
    let dataset = demo_dir().join("dataset.jsonl");
    let o = ehragent(
        &config(dir.path()),
        &[
            "eval",
            "--dataset",
            dataset.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--results",
            results.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Overall"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["overall"]["total"], 20);
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 20);
}

#[test]
fn tools_exec_runs_a_single_tool() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = ehragent(&cfg, &["tools", "exec", "Calculate", "(2+3)*4"]);
    assert_eq!(stdout(&o), "20\n");
    let o = ehragent(&cfg, &["tools", "exec", "Calendar", "2105-01-31", "+1 month"]);
    assert_eq!(stdout(&o).trim(), "2105-02-28");
    let o = ehragent(&cfg, &["tools", "exec", "LoadDB", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UnknownTable"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    assert_eq!(ehragent(&cfg, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ehragent(&cfg, &["tools", "exec", "Teleport"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"agent": {"max_steps": 0}}"#).unwrap();
    assert_eq!(ehragent(&bad, &["memory", "list"]).status.code(), Some(2));
}

#[test]
fn live_mode_without_a_key_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("live.json");
    let d = demo_dir();
    let text = serde_json::json!({
        "paths": {
            "tables": d.join("tables"),
            "metadata": d.join("metadata.json"),
            "memory": dir.path().join("memory.jsonl"),
            "demos": d.join("demos.json"),
            "knowledge_demos": d.join("knowledge_demos.json"),
        },
        "llm": {"api_key_env": "EHRAGENT_TEST_UNSET_KEY", "base_url": "http://127.0.0.1:9"},
    });
    std::fs::write(&cfg, text.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ehragent"))
        .arg("--config")
        .arg(&cfg)
        .args(["ask", "how many patients are female?"])
        .env_remove("EHRAGENT_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("EHRAGENT_TEST_UNSET_KEY"));
}

#[test]
fn memory_import_list_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let pairs = dir.path().join("pairs.jsonl");
    std::fs::write(
        &pairs,
        "{\"question\": \"q one\", \"code\": \"print(1)\"}\n\n{\"question\": \"q two\", \"code\": \"print(2)\"}\n",
    )
    .unwrap();
    let o = ehragent(&cfg, &["memory", "import", pairs.to_str().unwrap()]);
    assert_eq!(stdout(&o), "imported 2 entries\n");
    let listed = stdout(&ehragent(&cfg, &["memory", "list"]));
    assert_eq!(listed.lines().count(), 2);
    assert!(listed.contains("q one") && listed.contains("q two"));
    assert_eq!(ehragent(&cfg, &["memory", "clear"]).status.code(), Some(0));
    assert_eq!(stdout(&ehragent(&cfg, &["memory", "list"])), "");
}
