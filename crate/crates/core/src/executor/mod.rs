//! Code extraction, sandboxed execution and execution feedback.
//!
//! Each plan runs in a fresh child process that speaks the line protocol in
//! [`protocol`]. Tool calls are served here against the database, so the
//! sandbox never sees table files.

pub mod protocol;

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr_store::EhrDatabase;
use crate::toolkit::{dispatch, ToolName};
use protocol::{encode, HostMessage, SandboxMessage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCode {
    pub source: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLocation {
    pub line: Option<usize>,
    pub function: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub error_type: String,
    pub message: String,
    pub location: Option<ErrorLocation>,
}

impl ErrorTrace {
    pub fn line(&self) -> Option<usize> {
        self.location.as_ref().and_then(|l| l.line)
    }

    pub fn function(&self) -> Option<&str> {
        self.location.as_ref().and_then(|l| l.function.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    Error,
    Timeout,
    NoCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub printed_output: String,
    pub trace: Option<ErrorTrace>,
    pub duration_ms: u64,
}

impl ExecutionOutcome {
    pub fn no_code() -> ExecutionOutcome {
        ExecutionOutcome {
            status: ExecStatus::NoCode,
            printed_output: String::new(),
            trace: None,
            duration_ms: 0,
        }
    }
}

/// Content of the last triple-backtick block; `None` when the reply has no
/// complete block.
pub fn extract_code(reply: &str, turn_index: usize) -> Option<PlanCode> {
    let mut last = None;
    let mut open: Option<Vec<&str>> = None;
    for line in reply.lines() {
        let fence = line.trim_start().starts_with("```");
        match open.as_mut() {
            None if fence => open = Some(Vec::new()),
            None => {}
            Some(body) if fence => {
                last = Some(body.join("\n"));
                open = None;
            }
            Some(body) => body.push(line),
        }
    }
    last.filter(|s| !s.trim().is_empty()).map(|source| PlanCode { source, turn_index })
}

/// Whether `text` contains `needle` outside fenced blocks.
pub fn outside_fences_contains(text: &str, needle: &str) -> bool {
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence && line.contains(needle) {
            return true;
        }
    }
    false
}

pub const NO_CODE_NUDGE: &str = "No code block was found in your reply. Write the complete plan as \
Python code inside one triple-backtick block, or reply TERMINATE if the question is answered.";

pub fn outcome_to_feedback(o: &ExecutionOutcome) -> String {
    match o.status {
        ExecStatus::Success => format!("Execution succeeded. Output:\n{}", o.printed_output),
        ExecStatus::NoCode => NO_CODE_NUDGE.to_string(),
        ExecStatus::Timeout => {
            let mut s = String::from("Execution timed out.");
            if !o.printed_output.is_empty() {
                s.push_str("\nOutput before the timeout:\n");
                s.push_str(&o.printed_output);
            }
            s
        }
        ExecStatus::Error => {
            let mut s = String::from("Execution failed.");
            if let Some(t) = &o.trace {
                s.push_str(&format!("\nError type: {}\nMessage: {}", t.error_type, t.message));
                if let Some(line) = t.line() {
                    s.push_str(&format!("\nLocation: line {line}"));
                }
                if let Some(f) = t.function() {
                    s.push_str(&format!("\nFunction: {f}"));
                }
            }
            if !o.printed_output.is_empty() {
                s.push_str("\nOutput before the error:\n");
                s.push_str(&o.printed_output);
            }
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    /// Program and arguments; empty means the bundled stub next to the
    /// current executable.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            command: Vec::new(),
            timeout_s: default_timeout(),
        }
    }
}

impl SandboxConfig {
    pub fn with_program(program: impl Into<PathBuf>) -> SandboxConfig {
        SandboxConfig {
            command: vec![program.into().display().to_string()],
            timeout_s: default_timeout(),
        }
    }

    fn resolve(&self) -> Result<(PathBuf, Vec<String>), ExecutorError> {
        if let Some((program, args)) = self.command.split_first() {
            return Ok((PathBuf::from(program), args.to_vec()));
        }
        let exe = std::env::current_exe()
            .map_err(|e| ExecutorError::Spawn(format!("cannot locate the current executable: {e}")))?;
        let dir = exe
            .parent()
            .ok_or_else(|| ExecutorError::Spawn("executable has no parent directory".into()))?;
        let name = format!("ehragent-sandbox-stub{}", std::env::consts::EXE_SUFFIX);
        // Test binaries live one level below the bins in target/<profile>/deps.
        for candidate in [dir.join(&name), dir.join("..").join(&name)] {
            if candidate.is_file() {
                return Ok((candidate, Vec::new()));
            }
        }
        Err(ExecutorError::Spawn(format!(
            "no sandbox command configured and {name} not found next to {}",
            exe.display()
        )))
    }
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("cannot start the sandbox: {0}")]
    Spawn(String),
}

/// Kills and reaps the child however the call ends.
struct Reaper(Child);

impl Drop for Reaper {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

enum Event {
    Msg(SandboxMessage),
    Bad(String),
    Eof,
}

fn send(stdin: &mut ChildStdin, msg: &HostMessage) -> std::io::Result<()> {
    stdin.write_all(encode(msg).as_bytes())?;
    stdin.flush()
}

fn error_outcome(
    error_type: &str,
    message: String,
    line: Option<usize>,
    function: Option<String>,
    printed: &[String],
    started: Instant,
) -> ExecutionOutcome {
    let location = (line.is_some() || function.is_some()).then_some(ErrorLocation { line, function });
    ExecutionOutcome {
        status: ExecStatus::Error,
        printed_output: printed.join("\n"),
        trace: Some(ErrorTrace {
            error_type: error_type.to_string(),
            message,
            location,
        }),
        duration_ms: started.elapsed().as_millis() as u64,
    }
}

/// Runs one plan in a fresh sandbox process, serving its tool calls.
pub fn execute_plan(
    cfg: &SandboxConfig,
    db: &EhrDatabase,
    code: &PlanCode,
) -> Result<ExecutionOutcome, ExecutorError> {
    let started = Instant::now();
    let (program, args) = cfg.resolve()?;
    let child = Command::new(&program)
        .args(&args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| ExecutorError::Spawn(format!("{}: {e}", program.display())))?;
    let mut child = Reaper(child);
    let mut stdin = child.0.stdin.take().expect("piped stdin");
    let stdout = child.0.stdout.take().expect("piped stdout");

    let (tx, rx) = mpsc::channel();
    let reader = std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let ev = match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => match serde_json::from_str::<SandboxMessage>(&l) {
                    Ok(m) => Event::Msg(m),
                    Err(e) => Event::Bad(format!("{e}: {l}")),
                },
                Err(_) => break,
            };
            if tx.send(ev).is_err() {
                return;
            }
        }
        let _ = tx.send(Event::Eof);
    });

    let deadline = started + Duration::from_secs_f64(cfg.timeout_s.max(0.0));
    let mut printed: Vec<String> = Vec::new();
    // The tool whose failure is currently propagating, if any.
    let mut failed_tool: Option<(String, String)> = None;

    let run = HostMessage::Run {
        code: code.source.clone(),
        timeout_s: cfg.timeout_s,
    };
    let outcome = if send(&mut stdin, &run).is_err() {
        error_outcome(
            "SandboxCrash",
            "the sandbox closed its input before the run started".into(),
            None,
            None,
            &printed,
            started,
        )
    } else {
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            let ev = match rx.recv_timeout(wait) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) => {
                    break ExecutionOutcome {
                        status: ExecStatus::Timeout,
                        printed_output: printed.join("\n"),
                        trace: None,
                        duration_ms: started.elapsed().as_millis() as u64,
                    };
                }
                Err(RecvTimeoutError::Disconnected) => Event::Eof,
            };
            match ev {
                Event::Msg(SandboxMessage::Print { text }) => printed.push(text),
                Event::Msg(SandboxMessage::ToolCall { id, name, args }) => {
                    let reply = match ToolName::parse(&name) {
                        None => {
                            failed_tool = Some((name.clone(), "NameError".into()));
                            HostMessage::failed(id, "NameError", format!("unknown tool '{name}'"))
                        }
                        Some(tool) => match dispatch(db, tool, &args) {
                            Ok(v) => HostMessage::ok(id, v.to_json()),
                            Err(e) => {
                                failed_tool = Some((name.clone(), e.code().to_string()));
                                HostMessage::failed(id, e.code(), e.message())
                            }
                        },
                    };
                    if send(&mut stdin, &reply).is_err() {
                        // The child died; its exit shows up as Eof.
                        continue;
                    }
                }
                Event::Msg(SandboxMessage::Done) => {
                    break ExecutionOutcome {
                        status: ExecStatus::Success,
                        printed_output: printed.join("\n"),
                        trace: None,
                        duration_ms: started.elapsed().as_millis() as u64,
                    };
                }
                Event::Msg(SandboxMessage::Error {
                    error_type,
                    message,
                    line,
                }) => {
                    let function = failed_tool
                        .take()
                        .filter(|(_, code)| *code == error_type)
                        .map(|(tool, _)| tool);
                    break error_outcome(&error_type, message, line, function, &printed, started);
                }
                Event::Bad(detail) => {
                    break error_outcome(
                        "ProtocolError",
                        format!("malformed sandbox message: {detail}"),
                        None,
                        None,
                        &printed,
                        started,
                    );
                }
                Event::Eof => {
                    let status = child.0.wait().ok().and_then(|s| s.code());
                    let detail = match status {
                        Some(c) => format!("the sandbox exited with status {c} before reporting a result"),
                        None => "the sandbox was terminated before reporting a result".into(),
                    };
                    break error_outcome("SandboxCrash", detail, None, None, &printed, started);
                }
            }
        }
    };
    drop(stdin);
    drop(child);
    let _ = reader.join();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_block_wins() {
        let p = extract_code("here:\n```\nanswer=1\nprint(answer)\n```", 0).unwrap();
        assert_eq!(p.source, "answer=1\nprint(answer)");
        let two = "old:\n```python\nx = 1\n```\nnew:\n```python\nx = 2\n```\n";
        assert_eq!(extract_code(two, 3).unwrap(), PlanCode { source: "x = 2".into(), turn_index: 3 });
        assert_eq!(extract_code("TERMINATE", 0), None);
        assert_eq!(extract_code("```\nunterminated", 0), None);
        assert_eq!(extract_code("```\n\n```", 0), None);
    }

    #[test]
    fn terminate_outside_fences() {
        assert!(outside_fences_contains("ANSWER: 2\nTERMINATE", "TERMINATE"));
        assert!(!outside_fences_contains("```\n# TERMINATE later\n```", "TERMINATE"));
    }

    #[test]
    fn feedback_texts() {
        let ok = ExecutionOutcome {
            status: ExecStatus::Success,
            printed_output: "20".into(),
            trace: None,
            duration_ms: 5,
        };
        assert_eq!(outcome_to_feedback(&ok), "Execution succeeded. Output:\n20");
        let failed = ExecutionOutcome {
            status: ExecStatus::Error,
            printed_output: String::new(),
            trace: Some(ErrorTrace {
                error_type: "UnknownTable".into(),
                message: "no table named 'nope'".into(),
                location: Some(ErrorLocation {
                    line: Some(3),
                    function: Some("LoadDB".into()),
                }),
            }),
            duration_ms: 5,
        };
        let text = outcome_to_feedback(&failed);
        assert!(text.starts_with("Execution failed."));
        assert!(text.contains("UnknownTable") && text.contains("line 3"));
        assert_eq!(outcome_to_feedback(&ExecutionOutcome::no_code()), NO_CODE_NUDGE);
    }
}
