//! Chat-completion client used by the planner, tool selector, responder and
//! LLM-backed tools.
//!
//! Two backends exist: [`RemoteChat`] speaks the common `messages`/`choices`
//! JSON shape over HTTP, and [`MockLlm`] replays a script for offline runs
//! and tests.

mod mock;
#[cfg(feature = "net")]
mod remote;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockEntry, MockLlm, MockScript};
#[cfg(feature = "net")]
pub use remote::{RemoteChat, RetryPolicy, API_KEY_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => Err(LlmError::InvalidRequest(
                "first message must be the system message".into(),
            )),
            _ if !(self.temperature >= 0.0) => {
                Err(LlmError::InvalidRequest("temperature must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn last_content(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn char_count(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

/// Who issued a completion call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Planner,
    Selector,
    Responder,
    Tool,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Purpose::Planner => "planner",
            Purpose::Selector => "selector",
            Purpose::Responder => "responder",
            Purpose::Tool => "tool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
    #[error("mock script exhausted: {0}")]
    ScriptExhausted(String),
    #[error("invalid LLM request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    /// Token count reported by the backend, if any.
    pub tokens: Option<u64>,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, LlmError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub purpose: Purpose,
    pub token_estimate: u64,
    pub latency_ms: u64,
    pub ok: bool,
}

/// Append-only usage log, shareable between a session and its client view.
#[derive(Debug, Clone, Default)]
pub struct UsageLog(Arc<Mutex<Vec<UsageRecord>>>);

impl UsageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<UsageRecord>) -> Self {
        UsageLog(Arc::new(Mutex::new(records)))
    }

    pub fn push(&self, record: UsageRecord) {
        self.0.lock().expect("usage log poisoned").push(record);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.0.lock().expect("usage log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("usage log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decoding parameters per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub planner: f32,
    pub selector: f32,
    pub responder: f32,
    pub tool: f32,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            planner: 0.0,
            selector: 0.0,
            responder: 0.7,
            tool: 0.7,
        }
    }
}

impl Temperatures {
    pub fn for_purpose(&self, purpose: Purpose) -> f32 {
        match purpose {
            Purpose::Planner => self.planner,
            Purpose::Selector => self.selector,
            Purpose::Responder => self.responder,
            Purpose::Tool => self.tool,
        }
    }
}

/// Backend handle plus the usage log calls are recorded into.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    temperatures: Temperatures,
    max_tokens: u32,
    log: UsageLog,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("temperatures", &self.temperatures)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            temperatures: Temperatures::default(),
            max_tokens: 1024,
            log: UsageLog::new(),
        }
    }

    pub fn with_temperatures(mut self, temperatures: Temperatures) -> Self {
        self.temperatures = temperatures;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Same backend, recording into `log`.
    pub fn with_log(&self, log: UsageLog) -> Self {
        Self {
            log,
            ..self.clone()
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn usage(&self) -> &UsageLog {
        &self.log
    }

    pub fn request(&self, purpose: Purpose, messages: Vec<ChatMessage>) -> LlmRequest {
        LlmRequest {
            messages,
            temperature: self.temperatures.for_purpose(purpose),
            max_tokens: self.max_tokens,
        }
    }

    pub fn complete(&self, purpose: Purpose, messages: Vec<ChatMessage>) -> Result<String, LlmError> {
        let request = self.request(purpose, messages);
        request.validate()?;
        let started = Instant::now();
        let result = self.backend.complete(&request);
        let latency_ms = started.elapsed().as_millis() as u64;
        let (ok, token_estimate) = match &result {
            Ok(reply) => (
                true,
                reply
                    .tokens
                    .unwrap_or(((request.char_count() + reply.text.chars().count()) / 4) as u64),
            ),
            Err(_) => (false, (request.char_count() / 4) as u64),
        };
        self.log.push(UsageRecord {
            purpose,
            token_estimate,
            latency_ms,
            ok,
        });
        result.map(|r| r.text)
    }
}
