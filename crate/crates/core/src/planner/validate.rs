use std::collections::HashMap;

use serde::Serialize;

use super::graph::{ArgValue, SubTaskId, TaskGraph};
use crate::taxonomy::{Modality, TaskRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownTask {
        subtask: SubTaskId,
        task: String,
    },
    /// Subtasks that lie on, or downstream of, a dependency cycle.
    Cycle {
        subtasks: Vec<SubTaskId>,
    },
    ModalityMismatch {
        subtask: SubTaskId,
        slot: String,
        expected: Modality,
        found: Modality,
    },
    DanglingRef {
        subtask: SubTaskId,
        target: String,
    },
    MissingInput {
        subtask: SubTaskId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_cycle(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, Violation::Cycle { .. }))
    }

    pub fn has_modality_mismatch(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, Violation::ModalityMismatch { .. }))
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| match v {
                Violation::UnknownTask { subtask, task } => format!("{subtask}: unknown task `{task}`"),
                Violation::Cycle { subtasks } => {
                    let ids: Vec<&str> = subtasks.iter().map(SubTaskId::as_str).collect();
                    format!("dependency cycle among {}", ids.join(", "))
                }
                Violation::ModalityMismatch {
                    subtask,
                    slot,
                    expected,
                    found,
                } => format!("{subtask}.{slot}: expected {expected}, got {found}"),
                Violation::DanglingRef { subtask, target } => {
                    format!("{subtask}: reference to missing `{target}`")
                }
                Violation::MissingInput { subtask } => format!("{subtask}: no `input` argument"),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Validate against the task registry only; artifact references are not
/// checked.
pub fn validate_graph(graph: &TaskGraph, tasks: &TaskRegistry) -> ValidationReport {
    validate_graph_with(graph, tasks, |_| None, false)
}

/// Validate, resolving `{"artifact": id}` references through `lookup`.
/// Unresolvable artifact ids are reported as dangling.
pub fn validate_graph_with_artifacts<F>(graph: &TaskGraph, tasks: &TaskRegistry, lookup: F) -> ValidationReport
where
    F: Fn(&str) -> Option<Modality>,
{
    validate_graph_with(graph, tasks, lookup, true)
}

fn validate_graph_with<F>(graph: &TaskGraph, tasks: &TaskRegistry, lookup: F, check_artifacts: bool) -> ValidationReport
where
    F: Fn(&str) -> Option<Modality>,
{
    let mut violations = Vec::new();
    let index = graph.index_map();

    for st in &graph.subtasks {
        let spec = match tasks.lookup(&st.task) {
            Ok(spec) => Some(spec),
            Err(_) => {
                violations.push(Violation::UnknownTask {
                    subtask: st.id.clone(),
                    task: st.task.clone(),
                });
                None
            }
        };

        for dep in &st.deps {
            if !index.contains_key(dep) {
                violations.push(Violation::DanglingRef {
                    subtask: st.id.clone(),
                    target: dep.to_string(),
                });
            }
        }

        if !st.args.contains_key("input") {
            violations.push(Violation::MissingInput { subtask: st.id.clone() });
        }

        for (slot, value) in &st.args {
            let found = match value {
                ArgValue::Literal(_) => Some(Modality::Text),
                ArgValue::TaskOutputRef { task, .. } => {
                    if !index.contains_key(task) || !st.deps.contains(task) {
                        violations.push(Violation::DanglingRef {
                            subtask: st.id.clone(),
                            target: task.to_string(),
                        });
                        None
                    } else {
                        let producer = &graph.subtasks[index[task]];
                        tasks.lookup(&producer.task).ok().map(|p| p.output)
                    }
                }
                ArgValue::ArtifactRef(id) => {
                    let m = lookup(id.as_str());
                    if m.is_none() && check_artifacts {
                        violations.push(Violation::DanglingRef {
                            subtask: st.id.clone(),
                            target: id.to_string(),
                        });
                    }
                    m
                }
            };
            let expected = spec.and_then(|s| s.slot_modality(slot));
            if let (Some(expected), Some(found)) = (expected, found) {
                if expected != found {
                    violations.push(Violation::ModalityMismatch {
                        subtask: st.id.clone(),
                        slot: slot.clone(),
                        expected,
                        found,
                    });
                }
            }
        }
    }

    let cyclic = nodes_not_topologically_sortable(graph);
    if !cyclic.is_empty() {
        violations.push(Violation::Cycle {
            subtasks: cyclic.into_iter().map(|i| graph.subtasks[i].id.clone()).collect(),
        });
    }

    ValidationReport { violations }
}

/// Kahn's algorithm; returns the indices that never reach in-degree zero.
fn nodes_not_topologically_sortable(graph: &TaskGraph) -> Vec<usize> {
    let n = graph.len();
    let mut indegree = vec![0usize; n];
    let mut succ: HashMap<usize, Vec<usize>> = HashMap::new();
    for (a, b) in graph.edges() {
        indegree[b] += 1;
        succ.entry(a).or_default().push(b);
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut done = vec![false; n];
    while let Some(v) = queue.pop() {
        done[v] = true;
        for &w in succ.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                queue.push(w);
            }
        }
    }
    (0..n).filter(|&i| !done[i]).collect()
}
