use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::llm::ChatMessage;
use crate::responder::Turn;
use crate::taxonomy::TaskRegistry;

pub const HISTORY_HEADER: &str = "# Conversation history\n";
const CATALOG_HEADER: &str = "# Available tasks\n";
const EXEMPLAR_HEADER: &str = "# Examples\n";
const REQUEST_HEADER: &str = "# Current request\n";

pub const DEFAULT_PREAMBLE: &str = "\
You are the task planner of a music assistant. Break the user's request into \
subtasks drawn only from the task list below, and answer with a JSON array and \
nothing else. Each element is {\"id\": \"t<k>\", \"task\": <task name>, \
\"deps\": [ids of subtasks it waits for], \"args\": {\"input\": <value>}}. \
An argument value is a literal string, {\"from\": \"t<k>\"} for the output of \
an earlier subtask, or {\"artifact\": \"res-<n>\"} for a file the user already \
has. Make sure each input has the modality the task expects. If no tool is \
needed, answer with [].";

/// Example request and its plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub request: String,
    pub plan: serde_json::Value,
}

/// Shipped exemplar file.
pub const SEED_EXEMPLARS_JSON: &str = include_str!("../../data/exemplars.json");

pub fn load_exemplars(json: &str) -> Result<Vec<Exemplar>, PlannerError> {
    let exemplars: Vec<Exemplar> =
        serde_json::from_str(json).map_err(|e| PlannerError::Exemplars(e.to_string()))?;
    for (i, ex) in exemplars.iter().enumerate() {
        if !ex.plan.is_array() {
            return Err(PlannerError::Exemplars(format!("exemplar {i}: plan is not an array")));
        }
    }
    Ok(exemplars)
}

pub fn render_catalog(tasks: &TaskRegistry) -> String {
    let mut out = String::from(CATALOG_HEADER);
    for spec in tasks.list() {
        out.push_str(&format!(
            "- {} ({} -> {}, {}): {}\n",
            spec.name, spec.input, spec.output, spec.category, spec.description
        ));
    }
    out
}

pub fn render_exemplars(exemplars: &[Exemplar]) -> String {
    let mut out = String::from(EXEMPLAR_HEADER);
    for ex in exemplars {
        out.push_str(&format!(
            "Request: {}\nPlan: {}\n\n",
            ex.request,
            serde_json::to_string(&ex.plan).expect("json value serializes")
        ));
    }
    out
}

pub fn render_history(turns: &[Turn]) -> String {
    if turns.is_empty() {
        return String::new();
    }
    let mut out = String::from(HISTORY_HEADER);
    for t in turns {
        out.push_str(&t.render());
    }
    out
}

/// Character length of the rendered history for `turns`.
pub fn history_len(turns: &[Turn]) -> usize {
    if turns.is_empty() {
        0
    } else {
        HISTORY_HEADER.chars().count() + turns.iter().map(|t| t.render().chars().count()).sum::<usize>()
    }
}

/// Fully assembled planner prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerPrompt {
    pub system_preamble: String,
    pub task_catalog: String,
    pub exemplars: Vec<Exemplar>,
    pub history: String,
    pub current_request: String,
}

impl PlannerPrompt {
    fn system_text(&self) -> String {
        format!(
            "{}\n\n{}\n{}",
            self.system_preamble,
            self.task_catalog,
            render_exemplars(&self.exemplars)
        )
    }

    fn user_text(&self) -> String {
        let mut out = self.history.clone();
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(REQUEST_HEADER);
        out.push_str(&self.current_request);
        out
    }

    /// System message (instructions, catalog, examples) followed by a user
    /// message (history, then the request).
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(self.system_text()), ChatMessage::user(self.user_text())]
    }

    /// Everything sent to the model, concatenated.
    pub fn render(&self) -> String {
        format!("{}\n{}", self.system_text(), self.user_text())
    }

    pub fn rendered_len(&self) -> usize {
        self.render().chars().count()
    }
}
