use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendReply, LlmBackend, LlmError, LlmRequest};

/// One scripted reply. `match` is `*` or a substring that must occur in the
/// request's last message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub reply: String,
    /// Simulate an unreachable backend for this call.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

impl MockEntry {
    pub fn any(reply: impl Into<String>) -> Self {
        Self {
            pattern: "*".into(),
            reply: reply.into(),
            fail: false,
        }
    }

    pub fn matching(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: reply.into(),
            fail: false,
        }
    }

    pub fn failure() -> Self {
        Self {
            pattern: "*".into(),
            reply: String::new(),
            fail: true,
        }
    }

    fn matches(&self, request: &LlmRequest) -> bool {
        self.pattern == "*" || request.last_content().contains(&self.pattern)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript(pub Vec<MockEntry>);

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        MockScript(entries)
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

#[derive(Debug, Default)]
struct MockState {
    entries: Vec<(MockEntry, bool)>,
    requests: Vec<LlmRequest>,
}

/// Scripted backend. Entries are consumed in order: each request takes the
/// earliest unconsumed entry that matches it.
#[derive(Debug, Default)]
pub struct MockLlm {
    state: Mutex<MockState>,
    always_down: bool,
}

impl MockLlm {
    pub fn new(script: MockScript) -> Self {
        Self {
            state: Mutex::new(MockState {
                entries: script.0.into_iter().map(|e| (e, false)).collect(),
                requests: Vec::new(),
            }),
            always_down: false,
        }
    }

    /// A backend that fails every call as unreachable.
    pub fn unavailable() -> Self {
        Self {
            always_down: true,
            ..Self::default()
        }
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.state.lock().expect("mock poisoned").requests.clone()
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("mock poisoned");
        state.entries.iter().filter(|(_, used)| !used).count()
    }
}

impl LlmBackend for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, LlmError> {
        let mut state = self.state.lock().expect("mock poisoned");
        state.requests.push(request.clone());
        if self.always_down {
            return Err(LlmError::Unavailable("mock backend is down".into()));
        }
        let slot = state
            .entries
            .iter_mut()
            .find(|(entry, used)| !used && entry.matches(request));
        match slot {
            Some((entry, used)) => {
                *used = true;
                if entry.fail {
                    Err(LlmError::Unavailable("scripted failure".into()))
                } else {
                    Ok(BackendReply {
                        text: entry.reply.clone(),
                        tokens: None,
                    })
                }
            }
            None => {
                let remaining = state.entries.iter().filter(|(_, u)| !u).count();
                Err(LlmError::ScriptExhausted(if remaining == 0 {
                    "no entries left".into()
                } else {
                    format!("none of {remaining} remaining entries match")
                }))
            }
        }
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(text: &str) -> LlmRequest {
        LlmRequest {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 16,
        }
    }

    #[test]
    fn wildcard_reply() {
        let mock = MockLlm::new(MockScript::new(vec![MockEntry::any("[]")]));
        assert_eq!(mock.complete(&req("anything")).unwrap().text, "[]");
    }

    #[test]
    fn exhausted_after_one_entry() {
        let mock = MockLlm::new(MockScript::new(vec![MockEntry::any("x")]));
        mock.complete(&req("a")).unwrap();
        assert!(matches!(mock.complete(&req("b")), Err(LlmError::ScriptExhausted(_))));
        assert_eq!(mock.requests().len(), 2);
    }

    #[test]
    fn earliest_matching_unconsumed_entry() {
        let mock = MockLlm::new(MockScript::new(vec![
            MockEntry::matching("rain", "r1"),
            MockEntry::any("w"),
            MockEntry::matching("rain", "r2"),
        ]));
        assert_eq!(mock.complete(&req("sun")).unwrap().text, "w");
        assert_eq!(mock.complete(&req("rain")).unwrap().text, "r1");
        assert_eq!(mock.complete(&req("more rain")).unwrap().text, "r2");
        assert_eq!(mock.remaining(), 0);
    }

    #[test]
    fn scripted_failure_and_down_backend() {
        let mock = MockLlm::new(MockScript::new(vec![MockEntry::failure()]));
        assert!(matches!(mock.complete(&req("a")), Err(LlmError::Unavailable(_))));
        let down = MockLlm::unavailable();
        assert!(matches!(down.complete(&req("a")), Err(LlmError::Unavailable(_))));
    }

    #[test]
    fn script_json_format() {
        let script = MockScript::from_json(r#"[{"match":"*","reply":"[]"},{"match":"x","fail":true}]"#).unwrap();
        assert_eq!(script.0.len(), 2);
        assert!(script.0[1].fail);
    }
}
