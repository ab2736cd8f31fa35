//! Task planning: request + history in, validated dependency graph out.

mod graph;
mod parse;
mod prompt;
mod validate;

use std::sync::Mutex;

use thiserror::Error;

pub use graph::{ArgValue, SubTask, SubTaskId, TaskGraph};
pub use parse::{extract_first_array, parse_plan, serialize_plan, serialize_plan_pretty};
pub use prompt::{
    history_len, load_exemplars, render_catalog, render_history, Exemplar, PlannerPrompt,
    DEFAULT_PREAMBLE, HISTORY_HEADER, SEED_EXEMPLARS_JSON,
};
pub use validate::{validate_graph, validate_graph_with_artifacts, ValidationReport, Violation};

use crate::llm::{ChatMessage, LlmClient, LlmError, Purpose};
use crate::responder::{SessionState, Turn};
use crate::taxonomy::TaskRegistry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("request is empty")]
    EmptyRequest,
    #[error("no JSON plan found in model output")]
    NoPlanFound,
    #[error("subtask {index} is malformed: {reason}")]
    MalformedSubTask { index: usize, reason: String },
    #[error("duplicate subtask id `{0}`")]
    DuplicateId(String),
    #[error("budget of {budget} characters is below the minimum of {minimum}")]
    BudgetTooSmall { budget: usize, minimum: usize },
    #[error("planner needs at least 2 exemplars: {0}")]
    Exemplars(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl PlannerError {
    fn is_parse_failure(&self) -> bool {
        matches!(
            self,
            PlannerError::NoPlanFound | PlannerError::MalformedSubTask { .. } | PlannerError::DuplicateId(_)
        )
    }
}

/// Smallest history budget accepted by [`truncate_history`].
pub fn min_history_budget() -> usize {
    HISTORY_HEADER.chars().count()
}

/// The newest suffix of `turns` whose rendering fits in `budget`
/// characters. Whole turns are dropped, oldest first.
pub fn truncate_history(turns: &[Turn], budget: usize) -> Result<&[Turn], PlannerError> {
    let minimum = min_history_budget();
    if budget < minimum {
        return Err(PlannerError::BudgetTooSmall { budget, minimum });
    }
    let mut start = 0;
    while start < turns.len() && history_len(&turns[start..]) > budget {
        start += 1;
    }
    Ok(&turns[start..])
}

/// In-place variant operating on a session.
pub fn truncate_session_history(session: &mut SessionState, budget: usize) -> Result<(), PlannerError> {
    let keep = truncate_history(session.turns(), budget)?.len();
    session.retain_last(keep);
    Ok(())
}

/// Plan plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub graph: TaskGraph,
    /// Raw model replies, one per round (at most two).
    pub raw_replies: Vec<String>,
}

pub struct Planner {
    preamble: String,
    exemplars: Vec<Exemplar>,
    catalog_cache: Mutex<Option<(u64, String)>>,
}

impl std::fmt::Debug for Planner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Planner")
            .field("exemplars", &self.exemplars.len())
            .finish()
    }
}

impl Planner {
    pub fn new(exemplars: Vec<Exemplar>) -> Result<Self, PlannerError> {
        if exemplars.len() < 2 {
            return Err(PlannerError::Exemplars(format!("got {}", exemplars.len())));
        }
        Ok(Self {
            preamble: DEFAULT_PREAMBLE.to_string(),
            exemplars,
            catalog_cache: Mutex::new(None),
        })
    }

    pub fn seeded() -> Self {
        Self::new(load_exemplars(SEED_EXEMPLARS_JSON).expect("seed exemplars parse"))
            .expect("seed has enough exemplars")
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = preamble.into();
        self
    }

    /// Append user-supplied exemplars.
    pub fn add_exemplars(&mut self, more: impl IntoIterator<Item = Exemplar>) {
        self.exemplars.extend(more);
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    /// Catalog text, rebuilt whenever the registry generation changes.
    fn catalog(&self, tasks: &TaskRegistry) -> String {
        let mut cache = self.catalog_cache.lock().expect("catalog cache poisoned");
        match &*cache {
            Some((gen, text)) if *gen == tasks.generation() => text.clone(),
            _ => {
                let text = render_catalog(tasks);
                *cache = Some((tasks.generation(), text.clone()));
                text
            }
        }
    }

    pub fn build_prompt(
        &self,
        tasks: &TaskRegistry,
        session: &SessionState,
        request: &str,
    ) -> Result<PlannerPrompt, PlannerError> {
        if request.trim().is_empty() {
            return Err(PlannerError::EmptyRequest);
        }
        let mut prompt = PlannerPrompt {
            system_preamble: self.preamble.clone(),
            task_catalog: self.catalog(tasks),
            exemplars: self.exemplars.clone(),
            history: String::new(),
            current_request: request.to_string(),
        };
        let budget = session.truncation_budget;
        let fixed = prompt.rendered_len();
        if fixed > budget {
            return Err(PlannerError::BudgetTooSmall {
                budget,
                minimum: fixed,
            });
        }
        // One extra character for the separator between history and request.
        let room = budget - fixed;
        if room > min_history_budget() {
            let kept = truncate_history(session.turns(), room - 1)?;
            prompt.history = render_history(kept);
        }
        debug_assert!(prompt.rendered_len() <= budget);
        Ok(prompt)
    }

    /// One planning round plus at most one repair round on parse failure.
    pub fn plan(
        &self,
        llm: &LlmClient,
        tasks: &TaskRegistry,
        session: &SessionState,
        request: &str,
    ) -> Result<PlanOutcome, PlannerError> {
        let prompt = self.build_prompt(tasks, session, request)?;
        let mut messages = prompt.to_messages();
        let first = llm.complete(Purpose::Planner, messages.clone())?;
        match parse_plan(&first) {
            Ok(graph) => Ok(PlanOutcome {
                graph,
                raw_replies: vec![first],
            }),
            Err(err) if err.is_parse_failure() => {
                messages.push(ChatMessage::assistant(first.clone()));
                messages.push(ChatMessage::user(format!(
                    "Your reply could not be used: {err}. Answer again with only the JSON array plan."
                )));
                let second = llm.complete(Purpose::Planner, messages)?;
                let graph = parse_plan(&second)?;
                Ok(PlanOutcome {
                    graph,
                    raw_replies: vec![first, second],
                })
            }
            Err(err) => Err(err),
        }
    }
}

/// Use a caller-supplied plan instead of asking the model.
pub fn inject_task_flow(session: &SessionState, flow_text: &str) -> Result<TaskGraph, PlannerError> {
    let mut graph = parse_plan(flow_text)?;
    graph.request_id = format!("{}-flow", session.session_id);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clock::SteppingClock;
    use crate::llm::{MockEntry, MockLlm, MockScript};
    use crate::media::SegmentLimit;
    use crate::store::ArtifactStore;

    fn session(budget: usize) -> (tempfile::TempDir, SessionState) {
        let tmp = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(tmp.path().join("a"), SegmentLimit::default(), Arc::new(SteppingClock::epoch()));
        let s = SessionState::new("s1", store, budget);
        (tmp, s)
    }

    fn hundred_char_turn(c: char) -> Turn {
        // "user: " + 94 chars = 100 characters before the newline
        Turn::user(std::iter::repeat(c).take(94).collect::<String>())
    }

    #[test]
    fn truncate_three_turns_to_two() {
        let turns = vec![hundred_char_turn('a'), hundred_char_turn('b'), hundred_char_turn('c')];
        // header 23 + 3 * 101 = 326 > 250; header + 2 * 101 = 225 <= 250
        let kept = truncate_history(&turns, 250).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0], turns[1]);
        assert!(history_len(kept) <= 250);
    }

    #[test]
    fn truncate_identity_and_too_small() {
        let turns = vec![Turn::user("hi")];
        assert_eq!(truncate_history(&turns, 1000).unwrap(), &turns[..]);
        assert!(matches!(truncate_history(&turns, 3), Err(PlannerError::BudgetTooSmall { .. })));
    }

    #[test]
    fn truncate_session_is_idempotent() {
        let (_tmp, mut s) = session(10_000);
        for c in ['a', 'b', 'c', 'd'] {
            s.append_turn(hundred_char_turn(c));
        }
        truncate_session_history(&mut s, 250).unwrap();
        let once: Vec<Turn> = s.turns().to_vec();
        truncate_session_history(&mut s, 250).unwrap();
        assert_eq!(s.turns(), &once[..]);
        assert_eq!(once.len(), 2);
    }

    #[test]
    fn prompt_lists_catalog_and_ends_with_request() {
        let (_tmp, s) = session(16_000);
        let planner = Planner::seeded();
        let tasks = TaskRegistry::seeded();
        let prompt = planner.build_prompt(&tasks, &s, "write a song").unwrap();
        assert_eq!(prompt.task_catalog.lines().filter(|l| l.starts_with("- ")).count(), 13);
        assert!(prompt.exemplars.len() >= 2);
        assert!(prompt.render().lines().last().unwrap().contains("write a song"));
        assert!(prompt.history.is_empty());
        assert_eq!(planner.build_prompt(&tasks, &s, "  "), Err(PlannerError::EmptyRequest));
    }

    #[test]
    fn prompt_with_one_turn_history() {
        let (_tmp, mut s) = session(16_000);
        s.append_turn(Turn::user("earlier"));
        let planner = Planner::seeded();
        let tasks = TaskRegistry::seeded();
        let prompt = planner.build_prompt(&tasks, &s, "again").unwrap();
        assert_eq!(prompt.exemplars, planner.exemplars());
        assert_eq!(prompt.history.lines().count(), 2); // header + one turn
        assert!(prompt.history.contains("user: earlier"));
    }

    #[test]
    fn prompt_over_budget_drops_oldest_turns() {
        let planner = Planner::seeded();
        let tasks = TaskRegistry::seeded();
        let (_tmp, probe) = session(1_000_000);
        let fixed = planner.build_prompt(&tasks, &probe, "go").unwrap().rendered_len();
        let budget = fixed + 250;
        let (_tmp2, mut s) = session(budget);
        for c in ['a', 'b', 'c', 'd', 'e'] {
            s.append_turn(hundred_char_turn(c));
        }
        let prompt = planner.build_prompt(&tasks, &s, "go").unwrap();
        assert!(prompt.rendered_len() <= budget);
        assert!(prompt.history.contains(&"e".repeat(94)));
        assert!(!prompt.history.contains(&"a".repeat(94)));
        let (_tmp3, tiny) = session(100);
        assert!(matches!(planner.build_prompt(&tasks, &tiny, "go"), Err(PlannerError::BudgetTooSmall { .. })));
    }

    #[test]
    fn catalog_refreshes_after_registration() {
        let (_tmp, s) = session(16_000);
        let planner = Planner::seeded();
        let mut tasks = TaskRegistry::seeded();
        planner.build_prompt(&tasks, &s, "x").unwrap();
        tasks
            .register(
                crate::taxonomy::TaskSpec::new(
                    "score-preview",
                    crate::taxonomy::Modality::SymbolicMusic,
                    crate::taxonomy::Modality::Audio,
                    crate::taxonomy::TaskCategory::Auxiliary,
                    "render",
                ),
                false,
            )
            .unwrap();
        let prompt = planner.build_prompt(&tasks, &s, "x").unwrap();
        assert!(prompt.task_catalog.contains("score-preview"));
    }

    #[test]
    fn repair_round_after_parse_failure() {
        let (_tmp, s) = session(16_000);
        let mock = Arc::new(MockLlm::new(MockScript::new(vec![
            MockEntry::any("I think you want lyrics."),
            MockEntry::any(r#"[{"task":"lyric-generation","args":{"input":"rain"}}]"#),
        ])));
        let llm = LlmClient::new(mock.clone());
        let out = Planner::seeded().plan(&llm, &TaskRegistry::seeded(), &s, "lyrics about rain").unwrap();
        assert_eq!(out.graph.len(), 1);
        assert_eq!(out.raw_replies.len(), 2);
        assert!(mock.requests()[1].last_content().contains("could not be used"));
    }

    #[test]
    fn hard_failure_after_second_bad_reply() {
        let (_tmp, s) = session(16_000);
        let mock = Arc::new(MockLlm::new(MockScript::new(vec![MockEntry::any("no"), MockEntry::any("still no")])));
        let llm = LlmClient::new(mock);
        let err = Planner::seeded().plan(&llm, &TaskRegistry::seeded(), &s, "x").unwrap_err();
        assert_eq!(err, PlannerError::NoPlanFound);
    }

    #[test]
    fn injected_flow_skips_the_model() {
        let (_tmp, s) = session(16_000);
        let g = inject_task_flow(&s, r#"[{"task":"web-search","args":{"input":"muse"}}]"#).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(inject_task_flow(&s, "just do it"), Err(PlannerError::NoPlanFound));
        let chain = inject_task_flow(
            &s,
            r#"[{"task":"text-to-symbolic-music","args":{"input":"calm piano"}},
                {"task":"accompaniment","args":{"input":{"from":"t1"}}},
                {"task":"singing-voice-synthesis","args":{"input":"la","melody":{"from":"t2"}}}]"#,
        )
        .unwrap();
        assert!(validate_graph(&chain, &TaskRegistry::seeded()).is_accepted());
        assert_eq!(chain.edges(), vec![(0, 1), (1, 2)]);
    }
}
