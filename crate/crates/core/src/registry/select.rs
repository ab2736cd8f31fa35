use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{RegistryError, ToolDescriptor, ToolRegistry};
use crate::llm::{ChatMessage, LlmClient, Purpose};
use crate::taxonomy::TaskRegistry;

/// Scores closer than this are treated as tied.
const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Deterministic,
    LlmJudged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    pub mode: SelectionMode,
    pub weights: BTreeMap<String, f64>,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Deterministic,
            weights: BTreeMap::from([
                ("downloads".to_string(), 1.0),
                ("likes".to_string(), 0.5),
                ("stars".to_string(), 0.5),
            ]),
        }
    }
}

impl SelectionPolicy {
    /// Deterministic policy putting all weight on one attribute.
    pub fn emphasize(attr: impl Into<String>) -> Self {
        Self {
            mode: SelectionMode::Deterministic,
            weights: BTreeMap::from([(attr.into(), 1.0)]),
        }
    }

    pub fn llm_judged(mut self) -> Self {
        self.mode = SelectionMode::LlmJudged;
        self
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        for (attr, w) in &self.weights {
            if !(0.0..=1.0).contains(w) {
                return Err(RegistryError::InvalidPolicy(format!("weight for `{attr}` is outside [0, 1]")));
            }
        }
        let any = self
            .weights
            .iter()
            .any(|(attr, w)| *w > 0.0 && attr != "description");
        if !any {
            return Err(RegistryError::InvalidPolicy(
                "at least one numeric attribute needs a nonzero weight".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub tool_id: String,
    pub rationale: String,
    /// Per-candidate scores; empty when the LLM judgment was used.
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    pub mode: SelectionMode,
    /// LLM judgment was requested but attribute scoring decided.
    #[serde(default)]
    pub fallback: bool,
}

fn normalized(candidates: &[&ToolDescriptor], attr: &str) -> Vec<f64> {
    let raw: Vec<f64> = candidates.iter().map(|t| t.number(attr).unwrap_or(0.0)).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Weighted sum of min-max normalized numeric attributes, keyed by tool id.
/// A candidate lacking an attribute counts as 0 for it.
pub fn score_candidates(candidates: &[&ToolDescriptor], weights: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut scores: Vec<f64> = vec![0.0; candidates.len()];
    for (attr, w) in weights {
        if *w <= 0.0 || attr == "description" {
            continue;
        }
        for (s, n) in scores.iter_mut().zip(normalized(candidates, attr)) {
            *s += w * n;
        }
    }
    candidates.iter().map(|t| t.id.clone()).zip(scores).collect()
}

/// Highest score wins; near-ties go to the smallest id.
pub fn select_deterministic(
    task: &str,
    candidates: &[&ToolDescriptor],
    policy: &SelectionPolicy,
) -> Result<Selection, RegistryError> {
    policy.validate()?;
    if candidates.is_empty() {
        return Err(RegistryError::NoCandidates(task.to_string()));
    }
    let scores = score_candidates(candidates, &policy.weights);
    // BTreeMap iterates ids in ascending order, so a strict improvement is
    // needed to displace an earlier id.
    let mut best: Option<(&String, f64)> = None;
    for (id, &s) in &scores {
        match best {
            Some((_, b)) if s <= b + TIE_EPSILON => {}
            _ => best = Some((id, s)),
        }
    }
    let (winner, score) = best.expect("candidates nonempty");
    let winner = winner.clone();

    let idx = candidates.iter().position(|t| t.id == winner).expect("winner is a candidate");
    let leading: Vec<&str> = policy
        .weights
        .iter()
        .filter(|(attr, w)| **w > 0.0 && attr.as_str() != "description")
        .filter(|(attr, _)| normalized(candidates, attr)[idx] >= 1.0)
        .map(|(attr, _)| attr.as_str())
        .collect();
    let rationale = if candidates.len() == 1 {
        format!("`{winner}` is the only tool registered for {task}.")
    } else if leading.is_empty() {
        format!("`{winner}` has the best weighted attribute score ({score:.3}) for {task}.")
    } else {
        format!(
            "`{winner}` has the best weighted attribute score ({score:.3}) for {task}, leading on {}.",
            leading.join(", ")
        )
    };
    Ok(Selection {
        tool_id: winner,
        rationale,
        scores,
        mode: SelectionMode::Deterministic,
        fallback: false,
    })
}

/// First syntactically complete JSON object in `text`.
pub fn extract_first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            return Some(obj);
        }
    }
    None
}

fn judge_prompt(task: &str, candidates: &[&ToolDescriptor], context: &str) -> Vec<ChatMessage> {
    let mut listing = String::new();
    for t in candidates {
        let numbers: Vec<String> = t
            .attributes
            .iter()
            .filter(|(k, _)| k.as_str() != "description")
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        listing.push_str(&format!(
            "- {} ({}): {} [{}]\n",
            t.id,
            t.display_name,
            t.description(),
            numbers.join(", ")
        ));
    }
    vec![
        ChatMessage::system(
            "You pick the most suitable tool for one step of a music workflow. \
             Reply with a JSON object {\"tool\": \"<id>\", \"reason\": \"<one sentence>\"} and nothing else.",
        ),
        ChatMessage::user(format!("Task: {task}\nUser request: {context}\nCandidates:\n{listing}")),
    ]
}

fn parse_judgment(reply: &str, candidates: &[&ToolDescriptor]) -> Result<(String, String), String> {
    let obj = extract_first_object(reply).ok_or("no JSON object in reply")?;
    let tool = obj.get("tool").and_then(Value::as_str).ok_or("missing `tool`")?;
    if !candidates.iter().any(|t| t.id == tool) {
        return Err(format!("`{tool}` is not a candidate"));
    }
    let reason = obj.get("reason").and_then(Value::as_str).unwrap_or("").trim().to_string();
    Ok((tool.to_string(), reason))
}

impl ToolRegistry {
    /// Pick one tool for `task`. In LLM-judged mode any failure (backend
    /// down, unusable reply, no client) falls back to attribute scoring and
    /// says so in the rationale.
    pub fn select_tool(
        &self,
        task: &str,
        policy: &SelectionPolicy,
        context: &str,
        tasks: &TaskRegistry,
        llm: Option<&LlmClient>,
    ) -> Result<Selection, RegistryError> {
        let candidates = self.candidates_for(task, tasks)?;
        let task = tasks.canonical(task);
        if candidates.is_empty() {
            return Err(RegistryError::NoCandidates(task.to_string()));
        }
        if policy.mode == SelectionMode::Deterministic || candidates.len() == 1 {
            return select_deterministic(task, &candidates, policy);
        }
        let problem = match llm {
            None => "no LLM client configured".to_string(),
            Some(llm) => match llm.complete(Purpose::Selector, judge_prompt(task, &candidates, context)) {
                Err(e) => format!("LLM unavailable ({e})"),
                Ok(reply) => match parse_judgment(&reply, &candidates) {
                    Ok((tool_id, reason)) => {
                        let rationale = if reason.is_empty() {
                            format!("`{tool_id}` chosen by the language model.")
                        } else {
                            reason
                        };
                        return Ok(Selection {
                            tool_id,
                            rationale,
                            scores: BTreeMap::new(),
                            mode: SelectionMode::LlmJudged,
                            fallback: false,
                        });
                    }
                    Err(why) => format!("LLM judgment unusable ({why})"),
                },
            },
        };
        let mut sel = select_deterministic(task, &candidates, policy)?;
        sel.rationale = format!("{problem}; fell back to attribute scoring. {}", sel.rationale);
        sel.fallback = true;
        Ok(sel)
    }
}
