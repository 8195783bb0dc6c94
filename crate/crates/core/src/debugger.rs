//! Rubber-duck diagnosis of a failed plan, as a separate single-shot call.

use serde::{Deserialize, Serialize};

use crate::executor::{ErrorTrace, PlanCode};
use crate::llm::{chat, ChatBackend, ChatMessage, LlmError};

pub const DEBUG_SYSTEM: &str = "You are a rubber duck debugger. You read a failed plan line by \
line against its error trace and the tool definitions, and explain the most probable cause of \
the error. You do not rewrite the code.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugDiagnosis {
    pub trace: ErrorTrace,
    pub cause_text: String,
    pub turn_index: usize,
}

pub fn build_debug_prompt(code: &PlanCode, trace: &ErrorTrace, tool_defs: &str) -> String {
    let mut out = String::new();
    out.push_str(tool_defs.trim_end());
    out.push_str("\n\nThe following plan failed.\n\nCode:\n");
    out.push_str(code.source.trim_end());
    out.push_str("\n\nError type: ");
    out.push_str(&trace.error_type);
    out.push_str("\nMessage: ");
    out.push_str(&trace.message);
    match (trace.line(), trace.function()) {
        (Some(line), Some(f)) => out.push_str(&format!("\nLocation: line {line}, in {f}")),
        (Some(line), None) => out.push_str(&format!("\nLocation: line {line}")),
        (None, Some(f)) => out.push_str(&format!("\nLocation: in {f}")),
        (None, None) => {}
    }
    out.push_str(
        "\n\nWhat is the most probable cause of this error? Check the table and column names, \
the exact spelling and capitalisation of values, the condition syntax and the tool arguments.",
    );
    out
}

pub fn debug_messages(code: &PlanCode, trace: &ErrorTrace, tool_defs: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(DEBUG_SYSTEM),
        ChatMessage::user(build_debug_prompt(code, trace, tool_defs)),
    ]
}

pub fn diagnose(
    llm: &dyn ChatBackend,
    code: &PlanCode,
    trace: &ErrorTrace,
    tool_defs: &str,
    temperature: f64,
) -> Result<DebugDiagnosis, LlmError> {
    let reply = chat(llm, &debug_messages(code, trace, tool_defs), temperature)?;
    Ok(DebugDiagnosis {
        trace: trace.clone(),
        cause_text: reply.trim().to_string(),
        turn_index: code.turn_index,
    })
}

/// Execution feedback followed by the diagnosis, as sent to the planner.
pub fn feedback_with_cause(feedback: &str, cause: &str) -> String {
    format!("{feedback}\nPossible cause:\n{cause}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ErrorLocation;

    fn trace(line: Option<usize>) -> ErrorTrace {
        ErrorTrace {
            error_type: "UnknownColumn".into(),
            message: "no column named 'DRUGS'".into(),
            location: line.map(|l| ErrorLocation {
                line: Some(l),
                function: None,
            }),
        }
    }

    fn code() -> PlanCode {
        PlanCode {
            source: "t = LoadDB('prescriptions')\nx = 1\ny = 2\nv = GetValue(t, 'DRUGS')".into(),
            turn_index: 2,
        }
    }

    #[test]
    fn prompt_contents() {
        let p = build_debug_prompt(&code(), &trace(Some(4)), "DEFS");
        assert!(p.starts_with("DEFS\n"));
        assert!(p.contains(&code().source));
        assert!(p.contains("line 4"));
        assert!(p.contains("Error type: UnknownColumn\nMessage: no column named 'DRUGS'"));
        assert_eq!(p, build_debug_prompt(&code(), &trace(Some(4)), "DEFS"));
        let bare = build_debug_prompt(&code(), &trace(None), "DEFS");
        assert!(!bare.contains("Location:"));
    }

    #[test]
    fn feedback_format() {
        assert_eq!(
            feedback_with_cause("Execution failed.", "case mismatch"),
            "Execution failed.\nPossible cause:\ncase mismatch"
        );
    }
}
