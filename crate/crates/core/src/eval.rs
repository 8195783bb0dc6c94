//! Batch evaluation: success and completion rates per complexity level, and
//! a heuristic failure taxonomy for the misses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::ExecStatus;
use crate::llm::ChatBackend;
use crate::memory::MemoryStore;
use crate::orchestrator::{Agent, QueryResult, QueryStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("item {0}: no gold tables and no usable gold SQL")]
    LevelUndefined(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswer {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    pub answer: GoldAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_tables: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, EvalError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: label.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: label.clone(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    I,
    II,
    III,
    IV,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::I, Level::II, Level::III, Level::IV];

    pub fn from_table_count(n: usize) -> Option<Level> {
        match n {
            0 => None,
            1 => Some(Level::I),
            2 => Some(Level::II),
            3 => Some(Level::III),
            _ => Some(Level::IV),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::I => "I",
            Level::II => "II",
            Level::III => "III",
            Level::IV => "IV",
        }
    }
}

/// Lowercased, deduplicated names following FROM or JOIN.
pub fn sql_tables(sql: &str) -> Vec<String> {
    let words: Vec<&str> = sql
        .split(|c: char| c.is_whitespace() || c == ',' || c == '(' || c == ')' || c == ';')
        .filter(|w| !w.is_empty())
        .collect();
    let mut out: Vec<String> = Vec::new();
    for pair in words.windows(2) {
        let kw = pair[0].to_ascii_lowercase();
        if kw != "from" && kw != "join" {
            continue;
        }
        let name = pair[1].trim_matches(|c| c == '"' || c == '`').to_lowercase();
        let ident = name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
        if !name.is_empty() && ident && name != "select" && !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

pub fn complexity_level(item: &DatasetItem) -> Result<Level, EvalError> {
    let n = match (&item.gold_tables, &item.gold_sql) {
        (Some(tables), _) if !tables.is_empty() => {
            let mut seen: Vec<String> = tables.iter().map(|t| t.to_lowercase()).collect();
            seen.sort();
            seen.dedup();
            seen.len()
        }
        (_, Some(sql)) => sql_tables(sql).len(),
        _ => 0,
    };
    Level::from_table_count(n).ok_or_else(|| EvalError::LevelUndefined(item.id.clone()))
}

fn normalize(s: &str) -> String {
    let t = s.trim();
    let t = t
        .strip_prefix('"')
        .and_then(|x| x.strip_suffix('"'))
        .or_else(|| t.strip_prefix('\'').and_then(|x| x.strip_suffix('\'')))
        .unwrap_or(t);
    t.trim().to_lowercase()
}

fn atoms_match(a: &str, b: &str) -> bool {
    let (a, b) = (normalize(a), normalize(b));
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            x == y || (x - y).abs() <= 1e-6 * x.abs().max(y.abs())
        }
        _ => false,
    }
}

fn split_list(s: &str) -> Vec<String> {
    let t = s.trim();
    let t = t
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .unwrap_or(t);
    if t.trim().is_empty() {
        return Vec::new();
    }
    t.split(',').map(|x| x.trim().to_string()).collect()
}

fn multiset_match(pred: &[String], gold: &[String]) -> bool {
    if pred.len() != gold.len() {
        return false;
    }
    let mut used = vec![false; pred.len()];
    gold.iter().all(|g| {
        match (0..pred.len()).find(|&i| !used[i] && atoms_match(&pred[i], g)) {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

/// Trimmed, casefolded comparison; numbers within 1e-6 relative; lists as
/// multisets.
pub fn compare_answers(predicted: &str, gold: &GoldAnswer) -> bool {
    match gold {
        GoldAnswer::One(g) => {
            atoms_match(predicted, g) || {
                let items = split_list(predicted);
                items.len() == 1 && atoms_match(&items[0], g)
            }
        }
        GoldAnswer::Many(g) => multiset_match(&split_list(predicted), g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLabel {
    ContextLength,
    IncorrectSql,
    DateTime,
    FailToFollow,
    FailToDebug,
    IncorrectLogic,
    /// Transport, HTTP or sandbox failures outside the agent's control.
    SystemError,
}

impl FailureLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureLabel::ContextLength => "context_length",
            FailureLabel::IncorrectSql => "incorrect_sql",
            FailureLabel::DateTime => "date_time",
            FailureLabel::FailToFollow => "fail_to_follow",
            FailureLabel::FailToDebug => "fail_to_debug",
            FailureLabel::IncorrectLogic => "incorrect_logic",
            FailureLabel::SystemError => "system_error",
        }
    }
}

/// Rule-ordered label for an unsolved or wrongly answered query; `None`
/// when the query was solved correctly.
pub fn classify_failure(r: &QueryResult, answer_correct: bool) -> Option<FailureLabel> {
    if r.status == QueryStatus::Solved && answer_correct {
        return None;
    }
    let t = &r.transcript;
    if t.llm_failures.iter().any(|f| f.kind == "context_length") {
        return Some(FailureLabel::ContextLength);
    }
    if t.llm_failures.iter().any(|f| f.stage == crate::orchestrator::Stage::Debug) {
        return Some(FailureLabel::FailToDebug);
    }
    if !t.llm_failures.is_empty() || t.sandbox_failure.is_some() {
        return Some(FailureLabel::SystemError);
    }
    let last_error = t
        .executions
        .iter()
        .rev()
        .find(|e| e.outcome.status == ExecStatus::Error)
        .and_then(|e| e.outcome.trace.as_ref());
    if let Some(trace) = last_error {
        if trace.function() == Some("SQLInterpreter") || trace.error_type == "EmptyResult" {
            return Some(FailureLabel::IncorrectSql);
        }
        if trace.function() == Some("Calendar") || trace.error_type == "BadDate" {
            return Some(FailureLabel::DateTime);
        }
    }
    let no_code = t
        .executions
        .iter()
        .filter(|e| e.outcome.status == ExecStatus::NoCode)
        .count();
    if no_code >= 2 {
        return Some(FailureLabel::FailToFollow);
    }
    let had_errors = t
        .executions
        .iter()
        .any(|e| matches!(e.outcome.status, ExecStatus::Error | ExecStatus::Timeout));
    if !t.terminated && had_errors {
        return Some(FailureLabel::FailToDebug);
    }
    if r.status == QueryStatus::Solved {
        return Some(FailureLabel::IncorrectLogic);
    }
    Some(if had_errors {
        FailureLabel::FailToDebug
    } else {
        FailureLabel::FailToFollow
    })
}

/// `100 * count / total` with two decimals, halves rounded up.
pub fn pct(count: usize, total: usize) -> String {
    if total == 0 {
        return "0.00".to_string();
    }
    let (c, t) = (count as u128, total as u128);
    let hundredths = (c * 20_000 + t) / (2 * t);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: String,
    pub total: usize,
    pub successes: usize,
    pub completions: usize,
    pub sr: String,
    pub cr: String,
}

impl LevelStats {
    fn from_counts(level: &str, total: usize, successes: usize, completions: usize) -> LevelStats {
        LevelStats {
            level: level.to_string(),
            total,
            successes,
            completions,
            sr: pct(successes, total),
            cr: pct(completions, total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub level: Level,
    pub question: String,
    pub final_answer: Option<String>,
    pub status: QueryStatus,
    pub success: bool,
    pub completion: bool,
    pub failure_label: Option<FailureLabel>,
    pub steps_used: usize,
    pub execute_calls: usize,
    pub debug_prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub trace_id: Option<String>,
    pub model: String,
    pub memory_mode: String,
    pub parallelism: usize,
    pub deterministic: bool,
    pub taxonomy: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub levels: Vec<LevelStats>,
    pub overall: LevelStats,
    pub failure_labels: BTreeMap<String, usize>,
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    pub fn from_items(metadata: RunMetadata, items: Vec<ItemRecord>) -> EvalReport {
        let count = |f: &dyn Fn(&ItemRecord) -> bool| items.iter().filter(|i| f(i)).count();
        let levels = Level::ALL
            .iter()
            .map(|&l| {
                LevelStats::from_counts(
                    l.as_str(),
                    count(&|i| i.level == l),
                    count(&|i| i.level == l && i.success),
                    count(&|i| i.level == l && i.completion),
                )
            })
            .collect();
        let overall = LevelStats::from_counts(
            "overall",
            items.len(),
            count(&|i| i.success),
            count(&|i| i.completion),
        );
        let mut failure_labels = BTreeMap::new();
        for label in items.iter().filter_map(|i| i.failure_label) {
            *failure_labels.entry(label.as_str().to_string()).or_insert(0) += 1;
        }
        EvalReport {
            metadata,
            levels,
            overall,
            failure_labels,
            items,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Levels as columns, SR and CR as rows.
    pub fn text_table(&self) -> String {
        let mut cols: Vec<&LevelStats> = self.levels.iter().collect();
        cols.push(&self.overall);
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for c in &cols {
            let name = if c.level == "overall" { "Overall" } else { c.level.as_str() };
            let _ = write!(out, "{name:>10}");
        }
        out.push('\n');
        for (name, pick) in [
            ("SR", &(|c: &LevelStats| c.sr.clone()) as &dyn Fn(&LevelStats) -> String),
            ("CR", &|c: &LevelStats| c.cr.clone()),
            ("N", &|c: &LevelStats| c.total.to_string()),
        ] {
            let _ = write!(out, "{name:<8}");
            for c in &cols {
                let _ = write!(out, "{:>10}", pick(c));
            }
            out.push('\n');
        }
        if !self.failure_labels.is_empty() {
            out.push_str("\nFailure labels (heuristic):\n");
            for (k, v) in &self.failure_labels {
                let _ = writeln!(out, "  {k:<16}{v:>4}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub fresh_memory: bool,
    pub parallel: usize,
    pub model: String,
    pub trace_id: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            fresh_memory: false,
            parallel: 1,
            model: String::new(),
            trace_id: None,
        }
    }
}

/// Hash of the agent settings and model that shape the run.
pub fn config_hash(agent: &Agent, model: &str) -> String {
    let v = serde_json::json!({ "agent": agent.cfg, "model": model });
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub fn score_item(item: &DatasetItem, level: Level, r: &QueryResult) -> ItemRecord {
    let correct = r
        .final_answer
        .as_deref()
        .is_some_and(|a| compare_answers(a, &item.answer));
    let success = r.status == QueryStatus::Solved && correct;
    if r.status == QueryStatus::Solved && !correct {
        log::warn!(
            "item {}: answer {:?} does not match gold {:?}",
            item.id,
            r.final_answer,
            item.answer
        );
    }
    let completion = r
        .transcript
        .executions
        .iter()
        .any(|e| e.outcome.status == ExecStatus::Success);
    ItemRecord {
        id: item.id.clone(),
        level,
        question: item.question.clone(),
        final_answer: r.final_answer.clone(),
        status: r.status,
        success,
        completion,
        failure_label: classify_failure(r, correct),
        steps_used: r.steps_used,
        execute_calls: r.transcript.execute_calls(),
        debug_prompts: r.transcript.debug_prompts,
    }
}

/// Runs every item and scores it. Items run in dataset order when
/// `parallel` is 1; results are always reported in dataset order.
pub fn evaluate(
    agent: &Agent,
    store: &MemoryStore,
    llm: &dyn ChatBackend,
    dataset: &[DatasetItem],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<QueryResult>), EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let levels = dataset
        .iter()
        .map(complexity_level)
        .collect::<Result<Vec<_>, _>>()?;
    let parallel = opts.parallel.max(1).min(dataset.len());
    let slots: Mutex<Vec<Option<QueryResult>>> = Mutex::new(vec![None; dataset.len()]);
    let next = AtomicUsize::new(0);
    let run_one = |i: usize| {
        let item = &dataset[i];
        log::info!("item {} ({}/{})", item.id, i + 1, dataset.len());
        let r = if opts.fresh_memory {
            agent.run_query(&store.detached(), llm, &item.question)
        } else {
            agent.run_query(store, llm, &item.question)
        };
        slots.lock().expect("result slots poisoned")[i] = Some(r);
    };
    if parallel == 1 {
        (0..dataset.len()).for_each(run_one);
    } else {
        std::thread::scope(|s| {
            for _ in 0..parallel {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= dataset.len() {
                        break;
                    }
                    run_one(i);
                });
            }
        });
    }
    let results: Vec<QueryResult> = slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect();
    let items = dataset
        .iter()
        .zip(&levels)
        .zip(&results)
        .map(|((item, &level), r)| score_item(item, level, r))
        .collect();
    let metadata = RunMetadata {
        config_hash: config_hash(agent, &opts.model),
        trace_id: opts.trace_id.clone(),
        model: opts.model.clone(),
        memory_mode: if opts.fresh_memory { "fresh" } else { "shared" }.to_string(),
        parallelism: parallel,
        deterministic: parallel == 1 || opts.fresh_memory || !agent.cfg.ablations.memory,
        taxonomy: "heuristic".to_string(),
    };
    Ok((EvalReport::from_items(metadata, items), results))
}

/// Identifier of a recorded trace file: SHA-256 of its bytes.
pub fn trace_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(s: &str) -> GoldAnswer {
        GoldAnswer::One(s.to_string())
    }

    #[test]
    fn percentages() {
        assert_eq!(pct(342, 580), "58.97");
        assert_eq!(pct(498, 580), "85.86");
        assert_eq!(pct(29, 58), "50.00");
        assert_eq!(pct(0, 7), "0.00");
        assert_eq!(pct(0, 0), "0.00");
        assert_eq!(pct(1, 8), "12.50");
        assert_eq!(pct(1, 3), "33.33");
        assert_eq!(pct(2, 3), "66.67");
        assert_eq!(pct(5, 5), "100.00");
    }

    #[test]
    fn answer_matching() {
        assert!(compare_answers("3.0", &one("3")));
        assert!(compare_answers(" YES ", &one("yes")));
        assert!(compare_answers("[a, b]", &GoldAnswer::Many(vec!["b".into(), "a".into()])));
        assert!(compare_answers("['a', 'b']", &GoldAnswer::Many(vec!["b".into(), "a".into()])));
        assert!(!compare_answers("a", &GoldAnswer::Many(vec!["a".into(), "a".into()])));
        assert!(compare_answers("[2]", &one("2")));
        assert!(compare_answers("0.3333333", &one("0.33333333")));
        assert!(!compare_answers("0.334", &one("0.333")));
        assert!(!compare_answers("", &one("2")));
    }

    fn item(tables: Option<&[&str]>, sql: Option<&str>) -> DatasetItem {
        DatasetItem {
            id: "x".into(),
            question: "q".into(),
            answer: one("1"),
            gold_tables: tables.map(|t| t.iter().map(|s| s.to_string()).collect()),
            gold_sql: sql.map(str::to_string),
        }
    }

    #[test]
    fn levels() {
        assert_eq!(complexity_level(&item(Some(&["admissions", "procedures"]), None)).unwrap(), Level::II);
        assert_eq!(complexity_level(&item(None, Some("SELECT COUNT(*) FROM patients"))).unwrap(), Level::I);
        let four = "SELECT COUNT(*) FROM patients JOIN admissions ON a JOIN prescriptions ON b \
                    JOIN procedures_icd ON c";
        assert_eq!(complexity_level(&item(None, Some(four))).unwrap(), Level::IV);
        let nested = "SELECT * FROM Patients WHERE SUBJECT_ID IN (SELECT SUBJECT_ID FROM patients)";
        assert_eq!(complexity_level(&item(None, Some(nested))).unwrap(), Level::I);
        assert!(matches!(complexity_level(&item(None, None)), Err(EvalError::LevelUndefined(_))));
        assert_eq!(complexity_level(&item(Some(&["A", "a"]), None)).unwrap(), Level::I);
    }
}
