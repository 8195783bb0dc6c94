//! Chat-completion gateway.
//!
//! [`ChatBackend`] has three implementations: [`HttpBackend`] talks to any
//! endpoint speaking the common chat-completions JSON, [`ReplayBackend`]
//! answers from a recorded trace keyed by [`fingerprint`], and
//! [`RecordingBackend`] wraps another backend and appends every exchange to
//! a trace file.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// SHA-256 of a message list, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LlmRequestFingerprint(pub String);

impl fmt::Display for LlmRequestFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical encoding: for each message, role bytes, 0x1F, content bytes,
/// 0x1E. Whitespace is significant.
pub fn fingerprint(messages: &[ChatMessage]) -> LlmRequestFingerprint {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update([0x1F]);
        h.update(m.content.as_bytes());
        h.update([0x1E]);
    }
    LlmRequestFingerprint(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("context length exceeded: {0}")]
    ContextLengthExceeded(String),
    #[error("no recorded reply for request {0}")]
    ReplayMiss(LlmRequestFingerprint),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
}

pub trait ChatBackend: Send + Sync {
    /// Backend-specific completion. Callers go through [`chat`], which checks
    /// the message list first.
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError>;
}

pub fn chat(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    temperature: f64,
) -> Result<String, LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(LlmError::InvalidRequest(
                "the first message must be a system message".into(),
            ))
        }
        _ => {}
    }
    backend.complete(messages, temperature)
}

/// Approximate token count: runs of alphanumerics count once, every other
/// non-space character counts once.
pub fn approx_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    fp: String,
    response: String,
}

/// Replies from a recorded trace; never touches the network.
#[derive(Debug, Default, Clone)]
pub struct ReplayBackend {
    replies: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<ReplayBackend, LlmError> {
        let file = File::open(path).map_err(|e| {
            LlmError::InvalidRequest(format!("cannot open replay trace {}: {e}", path.display()))
        })?;
        let mut replies = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceLine = serde_json::from_str(&line).map_err(|e| {
                LlmError::InvalidRequest(format!(
                    "replay trace {} line {}: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            // First recording wins.
            replies.entry(rec.fp).or_insert(rec.response);
        }
        Ok(ReplayBackend { replies })
    }

    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (LlmRequestFingerprint, String)>,
    ) -> ReplayBackend {
        let mut replies = HashMap::new();
        for (fp, r) in pairs {
            replies.entry(fp.0).or_insert(r);
        }
        ReplayBackend { replies }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, LlmError> {
        let fp = fingerprint(messages);
        self.replies
            .get(&fp.0)
            .cloned()
            .ok_or(LlmError::ReplayMiss(fp))
    }
}

/// Appends `{"fp","response"}` lines for every successful completion of the
/// inner backend.
pub struct RecordingBackend<B> {
    inner: B,
    out: Mutex<File>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: &Path) -> std::io::Result<RecordingBackend<B>> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingBackend {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError> {
        let reply = self.inner.complete(messages, temperature)?;
        let line = serde_json::to_string(&TraceLine {
            fp: fingerprint(messages).0,
            response: reply.clone(),
        })
        .expect("trace line serializes");
        let mut out = self.out.lock().expect("recorder poisoned");
        writeln!(out, "{line}").map_err(|e| LlmError::Transport(format!("recording failed: {e}")))?;
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}

fn default_model() -> String {
    "gpt-4-0613".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> f64 {
    120.0
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: default_base_url(),
            model: default_model(),
            api_key_env: default_key_env(),
            timeout_s: default_timeout(),
        }
    }
}

pub const MAX_ATTEMPTS: u32 = 3;

/// Live backend for `POST {base_url}/chat/completions`.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
    backoff: Duration,
}

impl HttpBackend {
    /// Reads the API key from the environment variable named in `cfg`.
    pub fn from_config(cfg: &LlmConfig) -> Result<HttpBackend, LlmError> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| {
            LlmError::InvalidRequest(format!(
                "environment variable {} is not set; export the API key or pass --replay",
                cfg.api_key_env
            ))
        })?;
        Ok(HttpBackend::new(cfg, key))
    }

    pub fn new(cfg: &LlmConfig, api_key: String) -> HttpBackend {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key,
            agent,
            backoff: Duration::from_secs(1),
        }
    }

    /// First retry delay; doubles on each further attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> HttpBackend {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &str) -> Result<String, Attempt> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Transient(LlmError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(|e| Attempt::Transient(LlmError::Transport(e.to_string())))?;
        if (200..300).contains(&status) {
            return parse_completion(&text).map_err(Attempt::Fatal);
        }
        if is_context_overflow(&text) {
            return Err(Attempt::Fatal(LlmError::ContextLengthExceeded(text)));
        }
        let err = LlmError::Http { status, body: text };
        if status == 429 || status >= 500 {
            Err(Attempt::Transient(err))
        } else {
            Err(Attempt::Fatal(err))
        }
    }
}

enum Attempt {
    Transient(LlmError),
    Fatal(LlmError),
}

fn is_context_overflow(body: &str) -> bool {
    let code = serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/code").and_then(|c| c.as_str()).map(str::to_string));
    code.as_deref() == Some("context_length_exceeded")
        || body.contains("maximum context length")
}

fn parse_completion(body: &str) -> Result<String, LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

/// The request body sent by [`HttpBackend`].
pub fn request_body(model: &str, messages: &[ChatMessage], temperature: f64) -> serde_json::Value {
    serde_json::json!({
        "model": model,
        "messages": messages,
        "temperature": temperature,
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError> {
        let body = request_body(&self.model, messages, temperature).to_string();
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => {
                    log::warn!("chat attempt {attempt}/{MAX_ATTEMPTS} failed: {e}");
                    last = Some(e);
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn msgs(user: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user(user)]
    }

    #[test]
    fn fingerprint_examples() {
        let empty = fingerprint(&[]);
        assert_eq!(
            empty.0,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(fingerprint(&msgs("a b")), fingerprint(&msgs("a b")));
        assert_ne!(fingerprint(&msgs("a b")), fingerprint(&msgs("a  b")));
        assert_eq!(fingerprint(&msgs("x")).0.len(), 64);
        // Role is part of the key.
        assert_ne!(
            fingerprint(&[ChatMessage::system("x")]),
            fingerprint(&[ChatMessage::user("x")])
        );
    }

    #[test]
    fn fingerprint_matches_manual_encoding() {
        let mut h = Sha256::new();
        h.update(b"system\x1fsys\x1euser\x1fhi\x1e");
        assert_eq!(fingerprint(&msgs("hi")).0, hex::encode(h.finalize()));
    }

    #[test]
    fn replay_contract() {
        let m = msgs("q");
        let replay = ReplayBackend::from_pairs([(fingerprint(&m), "TERMINATE".to_string())]);
        assert_eq!(chat(&replay, &m, 0.0).unwrap(), "TERMINATE");
        assert_eq!(chat(&replay, &m, 0.0).unwrap(), chat(&replay, &m, 0.0).unwrap());
        assert!(matches!(
            chat(&replay, &msgs("other"), 0.0),
            Err(LlmError::ReplayMiss(_))
        ));
        assert!(matches!(
            chat(&replay, &[], 0.0),
            Err(LlmError::InvalidRequest(_))
        ));
        assert!(matches!(
            chat(&replay, &[ChatMessage::user("q")], 0.0),
            Err(LlmError::InvalidRequest(_))
        ));
    }

    #[test]
    fn recorder_output_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let m = msgs("q");
        let inner = ReplayBackend::from_pairs([(fingerprint(&m), "reply\nwith newline".to_string())]);
        let rec = RecordingBackend::new(inner, &path).unwrap();
        assert_eq!(rec.complete(&m, 0.0).unwrap(), "reply\nwith newline");
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.complete(&m, 0.0).unwrap(), "reply\nwith newline");
    }

    #[test]
    fn token_approximation() {
        assert_eq!(approx_tokens(""), 0);
        assert_eq!(approx_tokens("print(x)"), 4);
        assert_eq!(approx_tokens("hello  world"), 2);
    }

    /// Serves canned HTTP responses in order, counting requests.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // Read headers and the announced body.
                loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(split) = text.find("\r\n\r\n") {
                        let len = text[..split]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= split + 4 + len {
                            break;
                        }
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = std::io::Write::write_all(&mut stream, reply.as_bytes());
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    fn backend(base_url: String) -> HttpBackend {
        let cfg = LlmConfig {
            base_url,
            timeout_s: 5.0,
            ..LlmConfig::default()
        };
        HttpBackend::new(&cfg, "k".into()).with_backoff(Duration::from_millis(5))
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hi there"}}]}"#;

    #[test]
    fn http_success() {
        let (url, hits) = serve(vec![(200, OK.into())]);
        assert_eq!(backend(url).complete(&msgs("q"), 0.0).unwrap(), "hi there");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_retries_transient_errors() {
        let (url, hits) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, OK.into())]);
        assert_eq!(backend(url).complete(&msgs("q"), 0.0).unwrap(), "hi there");
        assert_eq!(hits.load(Ordering::SeqCst), 3);

        let (url, hits) = serve(vec![(503, "{}".into()); 4]);
        assert!(matches!(
            backend(url).complete(&msgs("q"), 0.0),
            Err(LlmError::Http { status: 503, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), MAX_ATTEMPTS as usize);
    }

    #[test]
    fn context_overflow_is_not_retried() {
        let body = r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#;
        let (url, hits) = serve(vec![(400, body.into()), (200, OK.into())]);
        assert!(matches!(
            backend(url).complete(&msgs("q"), 0.0),
            Err(LlmError::ContextLengthExceeded(_))
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn offline_gateway_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        drop(listener);
        assert!(matches!(
            backend(url).complete(&msgs("q"), 0.0),
            Err(LlmError::Transport(_))
        ));
    }

    #[test]
    fn request_body_shape() {
        let b = request_body("m", &msgs("q"), 0.0);
        assert_eq!(
            b,
            serde_json::json!({
                "model": "m",
                "messages": [{"role":"system","content":"sys"},{"role":"user","content":"q"}],
                "temperature": 0.0
            })
        );
    }
}
