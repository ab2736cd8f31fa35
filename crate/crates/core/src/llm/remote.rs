use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendReply, LlmBackend, LlmError, LlmRequest};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "MUSICAGENT_LLM_KEY";

/// Backoff delays between attempts; `backoff.len()` is the retry count.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl RetryPolicy {
    pub fn attempts(&self) -> usize {
        self.backoff.len() + 1
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    total_tokens: Option<u64>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

/// HTTP chat-completion backend.
pub struct RemoteChat {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
    attempts: AtomicU64,
}

impl RemoteChat {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            agent,
            attempts: AtomicU64::new(0),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(endpoint, model, key, timeout)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// HTTP attempts made so far, across all calls.
    pub fn attempt_count(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn attempt(&self, body: &[u8]) -> Result<BackendReply, Attempt> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(Attempt::Fatal(format!("authentication failed ({status})"))),
            408 | 429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => return Err(Attempt::Fatal(format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(format!("malformed completion response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("completion has no choices".into()))?;
        Ok(BackendReply {
            text: content,
            tokens: parsed.usage.and_then(|u| u.total_tokens),
        })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LlmBackend for RemoteChat {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, LlmError> {
        let body = serde_json::to_vec(&json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }))
        .expect("request serializes");

        let mut last_error = String::new();
        for attempt in 0..self.retry.attempts() {
            if attempt > 0 {
                std::thread::sleep(self.retry.backoff[attempt - 1]);
            }
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fatal(msg)) => return Err(LlmError::Unavailable(msg)),
                Err(Attempt::Retry(msg)) => last_error = msg,
            }
        }
        Err(LlmError::Unavailable(format!(
            "{} attempts failed; last error: {last_error}",
            self.retry.attempts()
        )))
    }

    fn name(&self) -> &str {
        "remote"
    }
}
