//! Session state and final answer assembly.

mod session;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

pub use session::*;

use crate::executor::{schedule, ExecutionState, SubtaskStatus};
use crate::llm::{ChatMessage, LlmClient, Purpose};
use crate::planner::{render_history, truncate_history, SubTaskId, TaskGraph};
use crate::store::ArtifactStore;
use crate::taxonomy::ArtifactId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponderError {
    #[error("execution has unfinished subtasks: {0:?}")]
    ExecutionUnfinished(Vec<String>),
}

/// What one subtask contributed to the answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtaskOutcome {
    pub task: String,
    pub tool: Option<String>,
    pub rationale: Option<String>,
    pub status: SubtaskStatus,
    pub artifacts: Vec<ArtifactId>,
}

/// Finished execution plus per-subtask outputs, ready to be summarised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultBundle {
    pub graph: TaskGraph,
    pub state: ExecutionState,
    pub outputs: BTreeMap<SubTaskId, SubtaskOutcome>,
}

impl ResultBundle {
    pub fn new(state: ExecutionState) -> Result<Self, ResponderError> {
        let unfinished: Vec<String> = state
            .status
            .iter()
            .filter(|(_, s)| !s.is_terminal())
            .map(|(id, _)| id.to_string())
            .collect();
        if !unfinished.is_empty() {
            return Err(ResponderError::ExecutionUnfinished(unfinished));
        }
        let mut outputs = BTreeMap::new();
        for st in &state.graph.subtasks {
            let selection = state.selections.get(&st.id);
            outputs.insert(
                st.id.clone(),
                SubtaskOutcome {
                    task: st.task.clone(),
                    tool: selection.map(|s| s.tool_id.clone()),
                    rationale: selection.map(|s| s.rationale.clone()),
                    status: state.status[&st.id].clone(),
                    artifacts: state.artifacts_of(&st.id).to_vec(),
                },
            );
        }
        Ok(Self {
            graph: state.graph.clone(),
            state,
            outputs,
        })
    }

    /// Bundle for a request that needed no tools.
    pub fn empty() -> Self {
        Self::new(ExecutionState::new(TaskGraph::default())).expect("empty state is finished")
    }

    /// Subtask ids in a topological order (graph order if unschedulable).
    pub fn ordered_ids(&self) -> Vec<SubTaskId> {
        match schedule(&self.graph) {
            Ok(levels) => levels.into_iter().flatten().collect(),
            Err(_) => self.graph.ids().cloned().collect(),
        }
    }

    /// Artifacts produced by Done subtasks, in topological order.
    pub fn produced(&self) -> Vec<ArtifactId> {
        self.ordered_ids()
            .iter()
            .flat_map(|id| self.outputs[id].artifacts.iter().cloned())
            .collect()
    }
}

fn describe_status(status: &SubtaskStatus) -> String {
    match status {
        SubtaskStatus::Done { .. } => "done".into(),
        SubtaskStatus::Failed(f) => format!("failed ({}: {})", f.class, f.message),
        other => format!("{other:?}").to_lowercase(),
    }
}

/// Summarisation prompt: the last turns of the conversation, the request and
/// every subtask with its tool, status and artifacts.
pub fn build_response_prompt(
    session: &SessionState,
    request: &str,
    bundle: &ResultBundle,
) -> Result<Vec<ChatMessage>, ResponderError> {
    if !bundle.state.is_finished() {
        return Err(ResponderError::ExecutionUnfinished(
            bundle
                .state
                .status
                .iter()
                .filter(|(_, s)| !s.is_terminal())
                .map(|(id, _)| id.to_string())
                .collect(),
        ));
    }
    let store = session.artifacts();
    let system = if bundle.graph.is_empty() {
        "You are a friendly music assistant. No tools were needed for this message: \
         reply to the user directly and conversationally."
            .to_string()
    } else {
        "You are a music assistant. The user's request was carried out by the tools listed below. \
         Write a short answer for the user that explains what was done and what failed, and cite every \
         artifact id exactly as written (for example res-3) so the user can open it. Do not invent ids."
            .to_string()
    };
    let mut user = String::new();
    let budget = session.truncation_budget / 2;
    if let Ok(kept) = truncate_history(session.turns(), budget) {
        user.push_str(&render_history(kept));
    }
    user.push_str(&format!("# Request\n{request}\n"));
    if !bundle.graph.is_empty() {
        user.push_str("# Results\n");
        for id in bundle.ordered_ids() {
            let o = &bundle.outputs[&id];
            let tool = o.tool.as_deref().unwrap_or("no tool");
            user.push_str(&format!("- {id} {} via {tool}: {}", o.task, describe_status(&o.status)));
            if !o.artifacts.is_empty() {
                let listed: Vec<String> = o
                    .artifacts
                    .iter()
                    .map(|a| match store.get(a) {
                        Some(art) => match &art.slot {
                            Some(slot) => format!("{a} ({}, {slot})", art.modality),
                            None => format!("{a} ({})", art.modality),
                        },
                        None => a.to_string(),
                    })
                    .collect();
                user.push_str(&format!(" -> {}", listed.join(", ")));
            }
            if let Some(SubtaskStatus::Done { .. }) = Some(&o.status) {
                if let Some(text) = text_preview(store, &o.artifacts) {
                    user.push_str(&format!("\n  output: {text}"));
                }
            }
            user.push('\n');
        }
    }
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

/// First text artifact among `ids`, shortened for the prompt.
fn text_preview(store: &ArtifactStore, ids: &[ArtifactId]) -> Option<String> {
    ids.iter().find_map(|id| match store.get(id).map(|a| &a.payload) {
        Some(crate::taxonomy::Payload::Inline { text }) => {
            let flat = text.replace('\n', " / ");
            let short: String = flat.chars().take(300).collect();
            Some(if short.len() < flat.len() { format!("{short}...") } else { short })
        }
        _ => None,
    })
}

/// Deterministic answer used when the language model is unavailable.
pub fn render_fallback(bundle: &ResultBundle) -> String {
    if bundle.graph.is_empty() {
        return "No tools were needed for this request, and the language model is unavailable, \
                so I cannot give a fuller answer right now."
            .to_string();
    }
    let mut lines = Vec::new();
    for id in bundle.ordered_ids() {
        let o = &bundle.outputs[&id];
        let tool = o.tool.as_deref().unwrap_or("-");
        match &o.status {
            SubtaskStatus::Done { artifacts } => {
                let ids: Vec<&str> = artifacts.iter().map(ArtifactId::as_str).collect();
                lines.push(format!("✓ {} via {tool} → {}", o.task, ids.join(", ")));
            }
            SubtaskStatus::Failed(f) => lines.push(format!("✗ {} via {tool} → {}: {}", o.task, f.class, f.message)),
            other => lines.push(format!("✗ {} via {tool} → {other:?}", o.task)),
        }
    }
    let produced = bundle.produced();
    if produced.is_empty() {
        lines.push("No artifacts were produced.".to_string());
    } else {
        let ids: Vec<&str> = produced.iter().map(ArtifactId::as_str).collect();
        lines.push(format!("Downloadable artifacts: {}", ids.join(", ")));
    }
    lines.join("\n")
}

/// Byte ranges of `res-<n>` tokens in `text`.
pub fn find_artifact_ids(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(off) = text[from..].find("res-") {
        let start = from + off;
        let mut end = start + 4;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        let boundary_before = start == 0 || !(bytes[start - 1].is_ascii_alphanumeric() || bytes[start - 1] == b'_');
        let boundary_after = end >= bytes.len() || !(bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_');
        if end > start + 4 && boundary_before && boundary_after {
            found.push((start, end));
        }
        from = end.max(start + 1);
    }
    found
}

/// Replace ids the session does not know with a placeholder, then append
/// any of `must_cite` the text does not mention.
pub fn ensure_citations(text: &str, must_cite: &[ArtifactId], store: &ArtifactStore) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut mentioned = BTreeSet::new();
    for (start, end) in find_artifact_ids(text) {
        out.push_str(&text[last..start]);
        let token = &text[start..end];
        match ArtifactId::parse(token).filter(|id| store.contains(id)) {
            Some(id) => {
                out.push_str(token);
                mentioned.insert(id);
            }
            None => out.push_str("[unknown artifact]"),
        }
        last = end;
    }
    out.push_str(&text[last..]);
    let missing: Vec<&str> = must_cite
        .iter()
        .filter(|id| !mentioned.contains(*id) && store.contains(id))
        .map(ArtifactId::as_str)
        .collect();
    if !missing.is_empty() {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&format!("Artifacts: {}", missing.join(", ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Response {
    pub text: String,
    /// The template fallback was used because the model could not answer.
    pub degraded: bool,
}

/// Summarise `bundle` with the model, falling back to the template when it
/// is unavailable. Produced artifacts are always cited.
pub fn respond(llm: &LlmClient, session: &SessionState, request: &str, bundle: &ResultBundle) -> Response {
    let (raw, degraded) = match build_response_prompt(session, request, bundle)
        .ok()
        .map(|prompt| llm.complete(Purpose::Responder, prompt))
    {
        Some(Ok(text)) if !text.trim().is_empty() => (text.trim().to_string(), false),
        _ => (render_fallback(bundle), true),
    };
    Response {
        text: ensure_citations(&raw, &bundle.produced(), session.artifacts()),
        degraded,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clock::SteppingClock;
    use crate::executor::{Failure, FailureClass};
    use crate::media::SegmentLimit;
    use crate::planner::{ArgValue, SubTask};
    use crate::taxonomy::Provenance;

    fn store() -> (tempfile::TempDir, ArtifactStore) {
        let tmp = tempfile::tempdir().unwrap();
        let s = ArtifactStore::new(tmp.path().join("a"), SegmentLimit::default(), Arc::new(SteppingClock::epoch()));
        (tmp, s)
    }

    fn finished(graph: TaskGraph, statuses: Vec<SubtaskStatus>) -> ResultBundle {
        let mut state = ExecutionState::new(graph);
        for (id, st) in state.graph.ids().cloned().collect::<Vec<_>>().into_iter().zip(statuses) {
            state.status.insert(id, st);
        }
        ResultBundle::new(state).unwrap()
    }

    fn done(ids: &[u64]) -> SubtaskStatus {
        SubtaskStatus::Done {
            artifacts: ids.iter().map(|&n| ArtifactId::from_index(n)).collect(),
        }
    }

    fn failed(class: FailureClass) -> SubtaskStatus {
        SubtaskStatus::Failed(Failure::new(class, "boom"))
    }

    #[test]
    fn fallback_single_done() {
        let g = TaskGraph::new(vec![SubTask::new("t1", "lyric-generation").arg("input", ArgValue::literal("x"))]);
        let text = render_fallback(&finished(g, vec![done(&[1])]));
        assert_eq!(text.matches('✓').count(), 1);
        assert!(text.contains("res-1"));
    }

    #[test]
    fn fallback_all_failed() {
        let g = TaskGraph::new(vec![
            SubTask::new("t1", "web-search").arg("input", ArgValue::literal("x")),
            SubTask::new("t2", "lyric-generation").arg("input", ArgValue::from_task("t1")),
        ]);
        let text = render_fallback(&finished(g, vec![failed(FailureClass::AdapterFailure), failed(FailureClass::Skipped)]));
        assert!(!text.contains('✓'));
        assert_eq!(text.matches('✗').count(), 2);
        assert!(text.contains("AdapterFailure"));
        assert!(text.contains("No artifacts"));
    }

    #[test]
    fn unfinished_state_is_rejected() {
        let g = TaskGraph::new(vec![SubTask::new("t1", "web-search")]);
        assert!(matches!(
            ResultBundle::new(ExecutionState::new(g)),
            Err(ResponderError::ExecutionUnfinished(_))
        ));
    }

    #[test]
    fn prompt_contents() {
        let (_tmp, mut s) = store();
        let a = s.put_text("lyrics", Provenance::UserInput, None);
        let b = s.put_text("genre: pop", Provenance::UserInput, None);
        let session = SessionState::new("s", s, DEFAULT_TRUNCATION_BUDGET);
        let g = TaskGraph::new(vec![
            SubTask::new("t1", "lyric-generation").arg("input", ArgValue::literal("x")),
            SubTask::new("t2", "web-search").arg("input", ArgValue::from_task("t1")),
        ]);
        let bundle = finished(g, vec![SubtaskStatus::Done { artifacts: vec![a.id.clone()] }, SubtaskStatus::Done { artifacts: vec![b.id.clone()] }]);
        let msgs = build_response_prompt(&session, "go", &bundle).unwrap();
        let all: String = msgs.iter().map(|m| m.content.clone()).collect();
        for needle in ["lyric-generation", "web-search", "res-1", "res-2", "cite every artifact id"] {
            assert!(all.contains(needle), "{needle}");
        }

        let g = TaskGraph::new(vec![SubTask::new("t1", "web-search").arg("input", ArgValue::literal("x"))]);
        let bundle = finished(g, vec![SubtaskStatus::Failed(Failure::new(FailureClass::AdapterFailure, "exit status 3"))]);
        let all: String = build_response_prompt(&session, "go", &bundle).unwrap().iter().map(|m| m.content.clone()).collect();
        assert!(all.contains("exit status 3"));

        let all: String = build_response_prompt(&session, "hello", &ResultBundle::empty())
            .unwrap()
            .iter()
            .map(|m| m.content.clone())
            .collect();
        assert!(all.contains("directly"));
    }

    #[test]
    fn citations_are_repaired() {
        let (_tmp, mut s) = store();
        let a = s.put_text("a", Provenance::UserInput, None);
        let b = s.put_text("b", Provenance::UserInput, None);
        let text = ensure_citations("Here is res-1 and res-99; see also pres-1x.", &[a.id.clone(), b.id.clone()], &s);
        assert_eq!(text, "Here is res-1 and [unknown artifact]; see also pres-1x.\n\nArtifacts: res-2");
        assert_eq!(find_artifact_ids("res-12, (res-3)."), vec![(0, 6), (9, 14)]);
        assert!(find_artifact_ids("res- res-x").is_empty());
    }
}
