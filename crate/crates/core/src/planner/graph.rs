use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::taxonomy::ArtifactId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubTaskId(String);

impl SubTaskId {
    pub fn new(id: impl Into<String>) -> Self {
        SubTaskId(id.into())
    }

    /// `t<k>`
    pub fn nth(k: usize) -> Self {
        SubTaskId(format!("t{k}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubTaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubTaskId {
    fn from(s: &str) -> Self {
        SubTaskId(s.to_string())
    }
}

/// Value bound to one argument slot of a subtask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgValue {
    Literal(String),
    ArtifactRef(ArtifactId),
    TaskOutputRef {
        task: SubTaskId,
        /// Named output slot; `None` means the primary (first) output.
        output: Option<String>,
    },
}

impl ArgValue {
    pub fn literal(s: impl Into<String>) -> Self {
        ArgValue::Literal(s.into())
    }

    pub fn from_task(id: impl Into<String>) -> Self {
        ArgValue::TaskOutputRef {
            task: SubTaskId::new(id),
            output: None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            ArgValue::Literal(s) => json!(s),
            ArgValue::ArtifactRef(id) => json!({ "artifact": id.as_str() }),
            ArgValue::TaskOutputRef { task, output: None } => json!({ "from": task.as_str() }),
            ArgValue::TaskOutputRef {
                task,
                output: Some(o),
            } => json!({ "from": task.as_str(), "output": o }),
        }
    }
}

impl Serialize for ArgValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubTask {
    pub id: SubTaskId,
    pub task: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub deps: Vec<SubTaskId>,
    pub args: BTreeMap<String, ArgValue>,
}

impl SubTask {
    pub fn new(id: impl Into<String>, task: impl Into<String>) -> Self {
        Self {
            id: SubTaskId::new(id),
            task: task.into(),
            deps: Vec::new(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, slot: impl Into<String>, value: ArgValue) -> Self {
        if let ArgValue::TaskOutputRef { task, .. } = &value {
            if !self.deps.contains(task) {
                self.deps.push(task.clone());
            }
        }
        self.args.insert(slot.into(), value);
        self
    }

    pub fn dep(mut self, id: impl Into<String>) -> Self {
        let id = SubTaskId::new(id);
        if !self.deps.contains(&id) {
            self.deps.push(id);
        }
        self
    }

    /// Subtasks whose outputs feed this one's arguments.
    pub fn output_refs(&self) -> impl Iterator<Item = (&str, &SubTaskId)> {
        self.args.iter().filter_map(|(slot, v)| match v {
            ArgValue::TaskOutputRef { task, .. } => Some((slot.as_str(), task)),
            _ => None,
        })
    }
}

/// Dependency graph of subtasks for one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaskGraph {
    pub request_id: String,
    pub subtasks: Vec<SubTask>,
}

impl TaskGraph {
    pub fn new(subtasks: Vec<SubTask>) -> Self {
        Self {
            request_id: String::new(),
            subtasks,
        }
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn get(&self, id: &SubTaskId) -> Option<&SubTask> {
        self.subtasks.iter().find(|s| &s.id == id)
    }

    pub fn index_map(&self) -> HashMap<&SubTaskId, usize> {
        self.subtasks.iter().enumerate().map(|(i, s)| (&s.id, i)).collect()
    }

    /// `(dependency index, dependent index)` pairs for every resolvable dep.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let index = self.index_map();
        let mut edges = Vec::new();
        for (i, s) in self.subtasks.iter().enumerate() {
            for d in &s.deps {
                if let Some(&j) = index.get(d) {
                    edges.push((j, i));
                }
            }
        }
        edges
    }

    pub fn ids(&self) -> impl Iterator<Item = &SubTaskId> {
        self.subtasks.iter().map(|s| &s.id)
    }
}
