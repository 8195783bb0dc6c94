//! Reference plan runtime behind the `ehragent-sandbox-stub` binary.
//!
//! Interprets a line-oriented subset of Python 3: assignments (with tuple
//! unpacking and augmented forms), `if/elif/else`, `for`, `while`,
//! `try/except`, `raise`, list comprehensions, conditional expressions, the
//! usual arithmetic, comparison and boolean operators, list/tuple/dict
//! literals, indexing and slicing, a few `str`/`list`/`dict` methods, and the
//! builtins `print len str repr bool int float abs round min max sum sorted
//! list tuple range enumerate zip dict`. The six tools are plain callables
//! that forward over the wire protocol. There are no functions, classes,
//! modules, files or processes; every `import` raises `ImportError`.
//!
//! Uncaught exceptions are reported with their class name and the 1-based
//! line of the statement that raised them.

mod interp;
mod lexer;
mod parser;
mod value;

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde_json::Value as Json;

use crate::executor::protocol::{encode, HostMessage, SandboxMessage};

pub use value::{float_repr, Value};

pub const EXIT_DONE: i32 = 0;
pub const EXIT_PROTOCOL: i32 = 2;
pub const EXIT_CHANNEL: i32 = 3;
/// The run outlived its own deadline.
pub const EXIT_DEADLINE: i32 = 124;

/// An exception raised inside the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Exc {
    pub error_type: String,
    pub message: String,
    pub line: Option<usize>,
}

impl Exc {
    pub fn new(error_type: &str, message: impl Into<String>, line: usize) -> Exc {
        Exc {
            error_type: error_type.to_string(),
            message: message.into(),
            line: Some(line),
        }
    }
}

/// Ends the process without a plan-level result.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub exit_code: i32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Exc(Exc),
    Abort(Abort),
}

/// The plan's view of the outside world.
pub trait Port {
    fn print(&mut self, text: &str) -> Result<(), Abort>;
    /// Runs a tool; the inner error is a failed result's `(code, message)`.
    fn tool(&mut self, name: &str, args: Vec<Json>) -> Result<Result<Json, (String, String)>, Abort>;
}

pub fn run_code(code: &str, port: &mut dyn Port, deadline: Option<Instant>) -> Result<(), Fault> {
    let toks = lexer::tokenize(code).map_err(Fault::Exc)?;
    let prog = parser::parse_program(toks).map_err(Fault::Exc)?;
    interp::Interp::new(port, deadline).run(&prog)
}

struct WirePort<R, W> {
    input: R,
    output: W,
    next_id: u64,
}

impl<R: BufRead, W: Write> WirePort<R, W> {
    fn send(&mut self, msg: &SandboxMessage) -> Result<(), Abort> {
        self.output
            .write_all(encode(msg).as_bytes())
            .and_then(|_| self.output.flush())
            .map_err(|e| Abort {
                exit_code: EXIT_CHANNEL,
                detail: format!("cannot write to host: {e}"),
            })
    }
}

impl<R: BufRead, W: Write> Port for WirePort<R, W> {
    fn print(&mut self, text: &str) -> Result<(), Abort> {
        self.send(&SandboxMessage::Print {
            text: text.to_string(),
        })
    }

    fn tool(&mut self, name: &str, args: Vec<Json>) -> Result<Result<Json, (String, String)>, Abort> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&SandboxMessage::ToolCall {
            id,
            name: name.to_string(),
            args,
        })?;
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => {
                return Err(Abort {
                    exit_code: EXIT_CHANNEL,
                    detail: "host closed the channel".into(),
                })
            }
            Ok(_) => {}
        }
        let violation = |detail: String| Abort {
            exit_code: EXIT_PROTOCOL,
            detail,
        };
        match serde_json::from_str::<HostMessage>(&line) {
            Ok(HostMessage::ToolResult {
                id: got,
                ok,
                value,
                code,
                message,
            }) => {
                if got != id {
                    return Err(violation(format!("expected tool_result {id}, got {got}")));
                }
                if ok {
                    Ok(Ok(value.unwrap_or(Json::Null)))
                } else {
                    Ok(Err((
                        code.unwrap_or_else(|| "ToolError".into()),
                        message.unwrap_or_default(),
                    )))
                }
            }
            Ok(other) => Err(violation(format!("expected tool_result, got {other:?}"))),
            Err(e) => Err(violation(format!("malformed host message: {e}"))),
        }
    }
}

/// Runs one sandbox session: a single `run` message, the plan, then `done` or
/// `error`. `arm` receives the run's timeout before execution starts so the
/// caller can install a watchdog. Returns the process exit code.
pub fn serve<R: BufRead, W: Write>(mut input: R, output: W, arm: impl FnOnce(Duration)) -> i32 {
    let mut first = String::new();
    let mut port = WirePort {
        input: std::io::BufReader::new(std::io::empty()),
        output,
        next_id: 1,
    };
    match input.read_line(&mut first) {
        Ok(0) | Err(_) => return EXIT_CHANNEL,
        Ok(_) => {}
    }
    let (code, timeout_s) = match serde_json::from_str::<HostMessage>(&first) {
        Ok(HostMessage::Run { code, timeout_s }) => (code, timeout_s),
        Ok(_) => return protocol_error(&mut port, "the first message must be of type run"),
        Err(e) => return protocol_error(&mut port, &format!("malformed run message: {e}")),
    };
    let timeout = Duration::from_secs_f64(timeout_s.clamp(0.0, 86_400.0));
    arm(timeout);
    let mut port = WirePort {
        input,
        output: port.output,
        next_id: 1,
    };
    let result = run_code(&code, &mut port, Some(Instant::now() + timeout));
    match result {
        Ok(()) => match port.send(&SandboxMessage::Done) {
            Ok(()) => EXIT_DONE,
            Err(a) => a.exit_code,
        },
        Err(Fault::Exc(e)) => {
            let msg = SandboxMessage::Error {
                error_type: e.error_type,
                message: e.message,
                line: e.line,
            };
            match port.send(&msg) {
                Ok(()) => EXIT_DONE,
                Err(a) => a.exit_code,
            }
        }
        Err(Fault::Abort(a)) => {
            if a.exit_code == EXIT_PROTOCOL {
                protocol_error(&mut port, &a.detail)
            } else {
                a.exit_code
            }
        }
    }
}

fn protocol_error<R: BufRead, W: Write>(port: &mut WirePort<R, W>, detail: &str) -> i32 {
    let _ = port.send(&SandboxMessage::Error {
        error_type: "ProtocolError".into(),
        message: detail.to_string(),
        line: None,
    });
    EXIT_PROTOCOL
}
