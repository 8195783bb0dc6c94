//! The agent loop: plan, execute, diagnose, refine, until the model says
//! `TERMINATE` or the step budget is spent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::debugger::{debug_messages, feedback_with_cause, DebugDiagnosis, DEBUG_SYSTEM};
use crate::ehr_store::{render_metadata, EhrDatabase};
use crate::eval::{classify_failure, FailureLabel};
use crate::executor::{
    execute_plan, extract_code, outcome_to_feedback, outside_fences_contains, ErrorTrace,
    ExecStatus, ExecutionOutcome, SandboxConfig, NO_CODE_NUDGE,
};
use crate::knowledge::{integrate_knowledge, KnowledgeDemo};
use crate::llm::{chat, ChatBackend, ChatMessage, LlmError, Role};
use crate::memory::MemoryStore;
use crate::toolkit::TOOL_DEFINITIONS;

pub const TERMINATE: &str = "TERMINATE";

/// One few-shot demonstration: a question and the plan that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demo {
    pub question: String,
    pub code: String,
}

pub fn load_demos(path: &Path) -> Result<Vec<Demo>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablations {
    #[serde(default = "yes")]
    pub knowledge: bool,
    #[serde(default = "yes")]
    pub memory: bool,
    #[serde(default = "yes")]
    pub debug: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            knowledge: true,
            memory: true,
            debug: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_k")]
    pub k_demos: usize,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub memory_policy: MemoryPolicy,
}

/// Which finished queries are written to long-term memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// Solved queries only.
    #[default]
    Success,
    /// Any query with at least one successful execution.
    Completion,
}

fn default_k() -> usize {
    4
}

fn default_steps() -> usize {
    10
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            k_demos: default_k(),
            max_steps: default_steps(),
            temperature: 0.0,
            ablations: Ablations::default(),
            memory_policy: MemoryPolicy::Success,
        }
    }
}

pub const PLANNER_RULES: &str = "\
Rules:
- Write the complete plan as Python code in a single triple-backtick block. Every plan runs from \
scratch, so include every step each time. Only the tools above and basic builtins are available; \
imports are not allowed.
- Print the values you need. You will receive the printed output, or the error type, message \
and line if the plan fails.
- If the plan fails, find the cause, then send the full corrected plan.
- When the printed output answers the question, reply with a line \"ANSWER: <value>\" followed by \
TERMINATE, without a code block.";

pub fn planner_system(tool_defs: &str) -> String {
    format!(
        "You are an agent that answers questions about an EHR database by writing Python plans \
that call the tools below.\n\n{}\n\n{PLANNER_RULES}",
        tool_defs.trim_end()
    )
}

/// System message with tools and rules, then one user message with the
/// metadata, the demonstrations, the question and, when given, the
/// knowledge.
pub fn compose_plan_prompt(
    metadata: &str,
    tool_defs: &str,
    demos: &[Demo],
    q: &str,
    knowledge: Option<&str>,
) -> Vec<ChatMessage> {
    let mut user = String::new();
    user.push_str(metadata.trim_end());
    user.push_str("\n\n");
    if !demos.is_empty() {
        user.push_str("Here are some examples:\n\n");
        for d in demos {
            user.push_str("Question: ");
            user.push_str(&d.question);
            user.push_str("\nSolution:\n```python\n");
            user.push_str(d.code.trim_end());
            user.push_str("\n```\n\n");
        }
    }
    user.push_str("Question: ");
    user.push_str(q);
    if let Some(k) = knowledge {
        user.push_str("\nKnowledge:\n");
        user.push_str(k.trim_end());
    }
    vec![
        ChatMessage::system(planner_system(tool_defs)),
        ChatMessage::user(user),
    ]
}

/// Memory neighbours first, padded with the initial demonstrations up to
/// `k`.
pub fn select_demos(store: Option<&MemoryStore>, initial: &[Demo], q: &str, k: usize) -> Vec<Demo> {
    let mut out: Vec<Demo> = store
        .map(|s| {
            s.retrieve_topk(q, k)
                .into_iter()
                .map(|e| Demo {
                    question: e.question,
                    code: e.code,
                })
                .collect()
        })
        .unwrap_or_default();
    for d in initial {
        if out.len() >= k {
            break;
        }
        out.push(d.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Knowledge,
    Planner,
    Debug,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmFailure {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

impl LlmFailure {
    fn new(stage: Stage, e: &LlmError) -> LlmFailure {
        let kind = match e {
            LlmError::Transport(_) => "transport",
            LlmError::Http { .. } => "http",
            LlmError::ContextLengthExceeded(_) => "context_length",
            LlmError::ReplayMiss(_) => "replay_miss",
            LlmError::InvalidRequest(_) => "invalid_request",
            LlmError::BadResponse(_) => "bad_response",
        };
        LlmFailure {
            stage,
            kind: kind.to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    /// Index of the assistant reply the plan came from, 0-based.
    pub turn: usize,
    pub code: Option<String>,
    pub outcome: ExecutionOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub turn: usize,
    pub trace: ErrorTrace,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub question: String,
    pub knowledge: Option<String>,
    pub demos: Vec<Demo>,
    pub messages: Vec<ChatMessage>,
    pub executions: Vec<ExecutionRecord>,
    pub diagnoses: Vec<DiagnosisRecord>,
    pub llm_failures: Vec<LlmFailure>,
    pub sandbox_failure: Option<String>,
    pub planner_calls: usize,
    pub debug_prompts: usize,
    pub terminated: bool,
    pub memory_written: bool,
}

impl Transcript {
    pub fn new(q: &str) -> Transcript {
        Transcript {
            question: q.to_string(),
            knowledge: None,
            demos: Vec::new(),
            messages: Vec::new(),
            executions: Vec::new(),
            diagnoses: Vec::new(),
            llm_failures: Vec::new(),
            sandbox_failure: None,
            planner_calls: 0,
            debug_prompts: 0,
            terminated: false,
            memory_written: false,
        }
    }

    /// Executions that actually ran a plan.
    pub fn execute_calls(&self) -> usize {
        self.executions.iter().filter(|e| e.code.is_some()).count()
    }

    pub fn last_success(&self) -> Option<&ExecutionRecord> {
        self.executions
            .iter()
            .rev()
            .find(|e| e.outcome.status == ExecStatus::Success)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Solved,
    Unsolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub question: String,
    pub final_answer: Option<String>,
    pub status: QueryStatus,
    pub steps_used: usize,
    pub failure_label: Option<FailureLabel>,
    pub transcript: Transcript,
}

impl QueryResult {
    /// Full JSON including execution timings.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("query results serialize")
    }

    /// JSON without timings; byte-stable across replayed runs.
    pub fn canonical_json(&self) -> String {
        let mut v = self.to_json();
        strip_key(&mut v, "duration_ms");
        serde_json::to_string(&v).expect("query results serialize")
    }
}

fn strip_key(v: &mut serde_json::Value, key: &str) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove(key);
            map.values_mut().for_each(|x| strip_key(x, key));
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|x| strip_key(x, key)),
        _ => {}
    }
}

/// The value on the last `ANSWER:` line outside code blocks.
pub fn answer_line(reply: &str) -> Option<String> {
    let mut in_fence = false;
    let mut found = None;
    for line in reply.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence {
            if let Some(v) = t.strip_prefix("ANSWER:") {
                let v = v.trim();
                if !v.is_empty() {
                    found = Some(v.to_string());
                }
            }
        }
    }
    found
}

/// The terminating reply's `ANSWER:` value, else the printed output of the
/// last successful execution.
pub fn extract_final_answer(t: &Transcript) -> Option<String> {
    if !t.terminated {
        return None;
    }
    let last = t.messages.iter().rev().find(|m| m.role == Role::Assistant)?;
    answer_line(&last.content).or_else(|| {
        t.last_success()
            .map(|e| e.outcome.printed_output.trim().to_string())
            .filter(|s| !s.is_empty())
    })
}

/// Everything a query needs besides the model and the memory store.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub db: EhrDatabase,
    pub metadata: String,
    pub tool_defs: String,
    pub demos: Vec<Demo>,
    pub knowledge_demos: Vec<KnowledgeDemo>,
    pub sandbox: SandboxConfig,
}

impl Agent {
    pub fn new(
        cfg: AgentConfig,
        db: EhrDatabase,
        demos: Vec<Demo>,
        knowledge_demos: Vec<KnowledgeDemo>,
        sandbox: SandboxConfig,
    ) -> Agent {
        let metadata = render_metadata(&db);
        Agent {
            cfg,
            db,
            metadata,
            tool_defs: TOOL_DEFINITIONS.to_string(),
            demos,
            knowledge_demos,
            sandbox,
        }
    }

    /// The planner's opening messages for `q`, without any model call
    /// besides the knowledge step.
    pub fn opening_prompt(&self, store: &MemoryStore, q: &str, knowledge: Option<&str>) -> Vec<ChatMessage> {
        let store = self.cfg.ablations.memory.then_some(store);
        let demos = select_demos(store, &self.demos, q, self.cfg.k_demos);
        compose_plan_prompt(&self.metadata, &self.tool_defs, &demos, q, knowledge)
    }

    pub fn run_query(&self, store: &MemoryStore, llm: &dyn ChatBackend, q: &str) -> QueryResult {
        let cfg = &self.cfg;
        let temp = cfg.temperature;
        let mut tr = Transcript::new(q);
        let mut steps = 0usize;

        if cfg.ablations.knowledge {
            match integrate_knowledge(llm, &self.metadata, q, &self.knowledge_demos, temp) {
                Ok(k) => tr.knowledge = Some(k.body),
                Err(e) => {
                    tr.llm_failures.push(LlmFailure::new(Stage::Knowledge, &e));
                    return self.finish(tr, steps, store);
                }
            }
        }
        let memory = cfg.ablations.memory.then_some(store);
        tr.demos = select_demos(memory, &self.demos, q, cfg.k_demos);
        let mut messages = compose_plan_prompt(
            &self.metadata,
            &self.tool_defs,
            &tr.demos,
            q,
            tr.knowledge.as_deref(),
        );

        tr.planner_calls += 1;
        let mut reply = match chat(llm, &messages, temp) {
            Ok(r) => r,
            Err(e) => {
                tr.llm_failures.push(LlmFailure::new(Stage::Planner, &e));
                tr.messages = messages;
                return self.finish(tr, steps, store);
            }
        };
        let mut turn = 0usize;
        loop {
            messages.push(ChatMessage::assistant(reply.clone()));
            if outside_fences_contains(&reply, TERMINATE) {
                tr.terminated = true;
                break;
            }
            if steps >= cfg.max_steps {
                break;
            }
            steps += 1;
            let feedback = match extract_code(&reply, turn) {
                None => {
                    tr.executions.push(ExecutionRecord {
                        turn,
                        code: None,
                        outcome: ExecutionOutcome::no_code(),
                    });
                    NO_CODE_NUDGE.to_string()
                }
                Some(code) => {
                    let outcome = match execute_plan(&self.sandbox, &self.db, &code) {
                        Ok(o) => o,
                        Err(e) => {
                            tr.sandbox_failure = Some(e.to_string());
                            break;
                        }
                    };
                    let mut fb = outcome_to_feedback(&outcome);
                    let trace = outcome.trace.clone();
                    tr.executions.push(ExecutionRecord {
                        turn,
                        code: Some(code.source.clone()),
                        outcome,
                    });
                    if let (Some(trace), true) = (trace, cfg.ablations.debug) {
                        tr.debug_prompts += 1;
                        let dm = debug_messages(&code, &trace, &self.tool_defs);
                        debug_assert_eq!(dm[0].content, DEBUG_SYSTEM);
                        match chat(llm, &dm, temp) {
                            Ok(cause) => {
                                let d = DebugDiagnosis {
                                    trace,
                                    cause_text: cause.trim().to_string(),
                                    turn_index: turn,
                                };
                                fb = feedback_with_cause(&fb, &d.cause_text);
                                tr.diagnoses.push(DiagnosisRecord {
                                    turn,
                                    trace: d.trace,
                                    cause: Some(d.cause_text),
                                });
                            }
                            Err(e) => {
                                tr.diagnoses.push(DiagnosisRecord {
                                    turn,
                                    trace,
                                    cause: None,
                                });
                                tr.llm_failures.push(LlmFailure::new(Stage::Debug, &e));
                                break;
                            }
                        }
                    }
                    fb
                }
            };
            messages.push(ChatMessage::user(feedback));
            tr.planner_calls += 1;
            turn += 1;
            reply = match chat(llm, &messages, temp) {
                Ok(r) => r,
                Err(e) => {
                    tr.llm_failures.push(LlmFailure::new(Stage::Planner, &e));
                    break;
                }
            };
        }
        tr.messages = messages;
        self.finish(tr, steps, store)
    }

    fn finish(&self, mut tr: Transcript, steps: usize, store: &MemoryStore) -> QueryResult {
        let write = match self.cfg.memory_policy {
            MemoryPolicy::Success => is_solved(&tr),
            MemoryPolicy::Completion => tr.last_success().is_some(),
        };
        if write && self.cfg.ablations.memory {
            if let Some(code) = tr.last_success().and_then(|e| e.code.clone()) {
                match store.insert_success(&tr.question, &code) {
                    Ok(_) => tr.memory_written = true,
                    Err(e) => log::warn!("memory write failed: {e}"),
                }
            }
        }
        QueryResult::from_transcript(tr, steps)
    }
}

fn is_solved(t: &Transcript) -> bool {
    t.terminated && t.last_success().is_some() && extract_final_answer(t).is_some()
}

impl QueryResult {
    /// Solved when the run terminated after at least one successful
    /// execution and an answer can be extracted; unsolved results carry a
    /// failure label.
    pub fn from_transcript(tr: Transcript, steps_used: usize) -> QueryResult {
        let solved = is_solved(&tr);
        let mut result = QueryResult {
            question: tr.question.clone(),
            final_answer: if solved { extract_final_answer(&tr) } else { None },
            status: if solved {
                QueryStatus::Solved
            } else {
                QueryStatus::Unsolved
            },
            steps_used,
            failure_label: None,
            transcript: tr,
        };
        if !solved {
            result.failure_label = classify_failure(&result, false);
        }
        result
    }
}
