//! Three agent operations compiled for the browser: check and schedule a
//! plan, rank the tools for a task, and render a note list to WAV.

use std::collections::BTreeMap;

use musicagent_core::executor::schedule;
use musicagent_core::media::{render_score_preview, text_to_score, write_wav, MediaError, SegmentLimit};
use musicagent_core::planner::{parse_plan, validate_graph, PlannerError, Violation};
use musicagent_core::registry::{score_candidates, select_deterministic, RegistryError, SelectionPolicy, ToolRegistry};
use musicagent_core::taxonomy::{Modality, TaskCategory, TaskRegistry, TaskSpec};
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Plan(#[from] PlannerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("weights must be a JSON object of numbers: {0}")]
    Weights(serde_json::Error),
}

/// Seed tasks plus `render-preview`, which the demo page also offers.
pub fn catalog() -> (TaskRegistry, ToolRegistry) {
    let mut tasks = TaskRegistry::seeded();
    tasks
        .register(
            TaskSpec::new(
                "render-preview",
                Modality::SymbolicMusic,
                Modality::Audio,
                TaskCategory::Auxiliary,
                "Render a symbolic score to a short audio preview.",
            ),
            false,
        )
        .expect("render-preview is not a seed task");
    let tools = ToolRegistry::seeded(&tasks);
    (tasks, tools)
}

#[derive(Debug, Serialize)]
pub struct PlanCheck {
    pub accepted: bool,
    pub summary: String,
    pub violations: Vec<Violation>,
    /// Subtask ids grouped by the round they can run in.
    pub levels: Vec<Vec<String>>,
}

/// Parse the first JSON array in `text` as a plan, validate it and, when it
/// is acyclic, group it into execution rounds.
pub fn check_plan(text: &str) -> Result<PlanCheck, DemoError> {
    let (tasks, _) = catalog();
    let graph = parse_plan(text)?;
    let report = validate_graph(&graph, &tasks);
    let levels = schedule(&graph)
        .map(|ls| ls.into_iter().map(|l| l.into_iter().map(|id| id.to_string()).collect()).collect())
        .unwrap_or_default();
    Ok(PlanCheck {
        accepted: report.is_accepted(),
        summary: report.summary(),
        violations: report.violations.clone(),
        levels,
    })
}

#[derive(Debug, Serialize)]
pub struct Ranking {
    pub chosen: String,
    pub rationale: String,
    /// Candidates best first.
    pub scores: Vec<(String, f64)>,
}

pub fn rank_tools(task: &str, weights: &BTreeMap<String, f64>) -> Result<Ranking, DemoError> {
    let (tasks, tools) = catalog();
    let candidates = tools.candidates_for(task, &tasks)?;
    let policy = SelectionPolicy {
        weights: weights.clone(),
        ..SelectionPolicy::default()
    };
    let selection = select_deterministic(task, &candidates, &policy)?;
    let mut scores: Vec<(String, f64)> = score_candidates(&candidates, &policy.weights).into_iter().collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Ranking {
        chosen: selection.tool_id,
        rationale: selection.rationale,
        scores,
    })
}

/// Note-list text to a mono WAV file, capped at `max_seconds`.
pub fn render_notes(text: &str, max_seconds: f64) -> Result<Vec<u8>, DemoError> {
    let score = text_to_score(text)?;
    let audio = render_score_preview(&score, SegmentLimit::new(max_seconds))?;
    Ok(write_wav(&audio))
}

fn to_js<T: Serialize>(r: Result<T, DemoError>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON of [`PlanCheck`].
#[wasm_bindgen(js_name = checkPlan)]
pub fn check_plan_js(text: &str) -> Result<String, JsError> {
    to_js(check_plan(text))
}

/// `weights` is a JSON object such as `{"downloads": 1, "stars": 0.5}`.
/// Returns JSON of [`Ranking`].
#[wasm_bindgen(js_name = rankTools)]
pub fn rank_tools_js(task: &str, weights: &str) -> Result<String, JsError> {
    let weights = serde_json::from_str(weights).map_err(DemoError::Weights);
    to_js(weights.and_then(|w| rank_tools(task, &w)))
}

#[wasm_bindgen(js_name = renderNotes)]
pub fn render_notes_js(text: &str, max_seconds: f64) -> Result<Vec<u8>, JsError> {
    render_notes(text, max_seconds).map_err(|e| JsError::new(&e.to_string()))
}

/// Task names, one per line as `name input -> output`.
#[wasm_bindgen(js_name = taskList)]
pub fn task_list() -> String {
    let (tasks, _) = catalog();
    tasks
        .list()
        .iter()
        .map(|t| format!("{} {} -> {}", t.name, t.input, t.output))
        .collect::<Vec<_>>()
        .join("\n")
}
