//! Plan wire format:
//!
//! ```text
//! [{"id":"t1","task":"<name>","deps":["t0"],"args":{"input":<string | {"from":"t0"} | {"artifact":"res-3"}>}}]
//! ```
//!
//! The parser takes the first complete JSON array in arbitrary LLM output
//! and ignores the prose around it.

use std::collections::{BTreeMap, HashSet};

use serde_json::{Map, Value};

use super::graph::{ArgValue, SubTask, SubTaskId, TaskGraph};
use super::PlannerError;
use crate::taxonomy::ArtifactId;

/// First syntactically complete JSON array in `text`.
pub fn extract_first_array(text: &str) -> Option<Vec<Value>> {
    for (i, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            return Some(items);
        }
    }
    None
}

fn id_from_value(v: &Value) -> Option<SubTaskId> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(SubTaskId::new(s.trim())),
        Value::Number(n) => n.as_u64().map(|k| SubTaskId::new(format!("t{k}"))),
        _ => None,
    }
}

fn parse_arg(index: usize, slot: &str, v: &Value) -> Result<ArgValue, PlannerError> {
    let malformed = |reason: String| PlannerError::MalformedSubTask { index, reason };
    match v {
        Value::String(s) => Ok(ArgValue::Literal(s.clone())),
        Value::Number(n) => Ok(ArgValue::Literal(n.to_string())),
        Value::Bool(b) => Ok(ArgValue::Literal(b.to_string())),
        Value::Object(obj) => parse_ref(obj).ok_or_else(|| {
            malformed(format!(
                "argument `{slot}` must be a string, {{\"from\": id}} or {{\"artifact\": id}}"
            ))
        }),
        _ => Err(malformed(format!("argument `{slot}` has unsupported type"))),
    }
}

fn parse_ref(obj: &Map<String, Value>) -> Option<ArgValue> {
    if let Some(from) = obj.get("from") {
        let task = id_from_value(from)?;
        let output = match obj.get("output") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return None,
        };
        return Some(ArgValue::TaskOutputRef { task, output });
    }
    if let Some(Value::String(id)) = obj.get("artifact") {
        return ArtifactId::parse(id.trim()).map(ArgValue::ArtifactRef);
    }
    None
}

fn parse_subtask(index: usize, item: &Value) -> Result<SubTask, PlannerError> {
    let malformed = |reason: &str| PlannerError::MalformedSubTask {
        index,
        reason: reason.to_string(),
    };
    let obj = item.as_object().ok_or_else(|| malformed("subtask is not an object"))?;
    let task = obj
        .get("task")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| malformed("missing `task` field"))?;

    let id = match obj.get("id") {
        None | Some(Value::Null) => SubTaskId::nth(index + 1),
        Some(v) => id_from_value(v).ok_or_else(|| malformed("`id` must be a string or number"))?,
    };

    let mut deps: Vec<SubTaskId> = Vec::new();
    match obj.get("deps") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for d in items {
                // Negative numeric deps mean "none" in some LLM dialects.
                if d.as_i64().is_some_and(|n| n < 0) {
                    continue;
                }
                let dep = id_from_value(d).ok_or_else(|| malformed("`deps` entries must be ids"))?;
                if !deps.contains(&dep) {
                    deps.push(dep);
                }
            }
        }
        Some(_) => return Err(malformed("`deps` must be an array")),
    }

    let mut args = BTreeMap::new();
    match obj.get("args") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (slot, v) in map {
                args.insert(slot.clone(), parse_arg(index, slot, v)?);
            }
        }
        Some(_) => return Err(malformed("`args` must be an object")),
    }

    // A task-output reference implies a dependency.
    for v in args.values() {
        if let ArgValue::TaskOutputRef { task, .. } = v {
            if !deps.contains(task) {
                deps.push(task.clone());
            }
        }
    }

    Ok(SubTask {
        id,
        task: task.to_string(),
        deps,
        args,
    })
}

/// Structural parse only; see `validate_graph` for semantic checks.
pub fn parse_plan(llm_output: &str) -> Result<TaskGraph, PlannerError> {
    let items = extract_first_array(llm_output).ok_or(PlannerError::NoPlanFound)?;
    let subtasks = items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_subtask(i, item))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    for s in &subtasks {
        if !seen.insert(&s.id) {
            return Err(PlannerError::DuplicateId(s.id.to_string()));
        }
    }
    Ok(TaskGraph::new(subtasks))
}

pub fn serialize_plan(graph: &TaskGraph) -> String {
    serde_json::to_string(&graph.subtasks).expect("plan serializes")
}

pub fn serialize_plan_pretty(graph: &TaskGraph) -> String {
    serde_json::to_string_pretty(&graph.subtasks).expect("plan serializes")
}
