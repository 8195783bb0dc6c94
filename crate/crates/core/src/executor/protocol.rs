//! Messages exchanged with the sandbox process, one JSON object per line.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Host to sandbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HostMessage {
    Run {
        code: String,
        timeout_s: f64,
    },
    ToolResult {
        id: u64,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        code: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
    },
}

impl HostMessage {
    pub fn ok(id: u64, value: Value) -> HostMessage {
        HostMessage::ToolResult {
            id,
            ok: true,
            value: Some(value),
            code: None,
            message: None,
        }
    }

    pub fn failed(id: u64, code: impl Into<String>, message: impl Into<String>) -> HostMessage {
        HostMessage::ToolResult {
            id,
            ok: false,
            value: None,
            code: Some(code.into()),
            message: Some(message.into()),
        }
    }
}

/// Sandbox to host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SandboxMessage {
    ToolCall {
        id: u64,
        name: String,
        args: Vec<Value>,
    },
    Print {
        text: String,
    },
    Done,
    Error {
        error_type: String,
        message: String,
        line: Option<usize>,
    },
}

/// Serializes one message as a single line with its newline.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol messages serialize");
    line.push('\n');
    line
}
