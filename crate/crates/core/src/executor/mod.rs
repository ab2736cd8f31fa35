//! Runs a validated task graph: level-by-level scheduling, tool selection,
//! input binding, budgeted tool loading and adapter invocation.

mod builtin;
mod invoke;
mod ledger;
pub mod multipart;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

pub use builtin::{
    add_accompaniment, classify, compose_from_text, melody_for_lyrics, run_builtin, run_remote_stub, separate,
    transcribe, transfer_timbre, BUILTIN_TASKS,
};
pub use invoke::{invoke, subprocess_command, AdapterContext, AdapterError, BoundInput, ToolOutput, MAX_HTTP_BODY};
pub use ledger::{Lease, LedgerError, LedgerEvent, ResourceLedger, UnloadHook};

use crate::llm::LlmClient;
use crate::planner::{ArgValue, SubTask, SubTaskId, TaskGraph};
use crate::registry::{RegistryError, Selection, SelectionPolicy, ToolDescriptor, ToolRegistry};
use crate::store::ArtifactStore;
use crate::taxonomy::{Artifact, ArtifactId, Modality, Provenance, TaskRegistry, TaskSpec};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutorError {
    #[error("graph cannot be scheduled: {0}")]
    InvalidGraph(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("reference to `{0}` cannot be resolved")]
    UnresolvedRef(String),
    #[error("slot `{slot}` expects {expected}, got {found}")]
    ModalityMismatch {
        slot: String,
        expected: Modality,
        found: Modality,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureClass {
    InvalidGraph,
    UnknownTask,
    NoCandidates,
    UnresolvedRef,
    ModalityMismatch,
    CostExceedsBudget,
    ResourceTimeout,
    UnsupportedTask,
    AdapterFailure,
    StoreFailure,
    /// A dependency failed, so this subtask never ran.
    Skipped,
}

impl std::fmt::Display for FailureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("class serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub class: FailureClass,
    pub message: String,
}

impl Failure {
    pub fn new(class: FailureClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.class == FailureClass::Skipped
    }
}

impl From<AdapterError> for Failure {
    fn from(e: AdapterError) -> Self {
        match &e {
            AdapterError::UnsupportedTask(_) => Failure::new(FailureClass::UnsupportedTask, e.to_string()),
            AdapterError::Failed {
                reason,
                exit_code,
                stderr,
            } => {
                let mut msg = reason.clone();
                if let Some(code) = exit_code {
                    msg.push_str(&format!(" (exit code {code})"));
                }
                if !stderr.is_empty() {
                    msg.push_str(&format!("; stderr: {stderr}"));
                }
                Failure::new(FailureClass::AdapterFailure, msg)
            }
            _ => Failure::new(FailureClass::AdapterFailure, e.to_string()),
        }
    }
}

impl From<LedgerError> for Failure {
    fn from(e: LedgerError) -> Self {
        let class = match e {
            LedgerError::CostExceedsBudget { .. } => FailureClass::CostExceedsBudget,
            LedgerError::ResourceTimeout { .. } => FailureClass::ResourceTimeout,
        };
        Failure::new(class, e.to_string())
    }
}

impl From<BindError> for Failure {
    fn from(e: BindError) -> Self {
        let class = match e {
            BindError::UnresolvedRef(_) => FailureClass::UnresolvedRef,
            BindError::ModalityMismatch { .. } => FailureClass::ModalityMismatch,
        };
        Failure::new(class, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SubtaskStatus {
    Pending,
    Ready,
    Running,
    Done { artifacts: Vec<ArtifactId> },
    Failed(Failure),
}

impl SubtaskStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, SubtaskStatus::Done { .. } | SubtaskStatus::Failed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Ready,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionEvent {
    pub seq: usize,
    pub at: DateTime<Utc>,
    pub subtask: SubTaskId,
    pub event: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<ArtifactId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInvocation {
    pub subtask: SubTaskId,
    pub tool_id: String,
    pub task: String,
    pub bound_inputs: BTreeMap<String, ArtifactId>,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionState {
    pub graph: TaskGraph,
    pub status: IndexMap<SubTaskId, SubtaskStatus>,
    pub trace: Vec<ExecutionEvent>,
    pub selections: BTreeMap<SubTaskId, Selection>,
    pub invocations: Vec<ToolInvocation>,
}

impl ExecutionState {
    pub fn new(graph: TaskGraph) -> Self {
        let status = graph.ids().map(|id| (id.clone(), SubtaskStatus::Pending)).collect();
        Self {
            graph,
            status,
            trace: Vec::new(),
            selections: BTreeMap::new(),
            invocations: Vec::new(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.status.values().all(SubtaskStatus::is_terminal)
    }

    pub fn status_of(&self, id: &SubTaskId) -> Option<&SubtaskStatus> {
        self.status.get(id)
    }

    pub fn artifacts_of(&self, id: &SubTaskId) -> &[ArtifactId] {
        match self.status.get(id) {
            Some(SubtaskStatus::Done { artifacts }) => artifacts,
            _ => &[],
        }
    }

    pub fn failure_of(&self, id: &SubTaskId) -> Option<&Failure> {
        match self.status.get(id) {
            Some(SubtaskStatus::Failed(f)) => Some(f),
            _ => None,
        }
    }

    /// Every artifact produced by a Done subtask, in completion order.
    pub fn produced_artifacts(&self) -> Vec<ArtifactId> {
        self.trace
            .iter()
            .filter(|e| e.event == EventKind::Done)
            .flat_map(|e| e.artifacts.iter().cloned())
            .collect()
    }

    /// Trace as line-delimited JSON.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    fn push(&mut self, at: DateTime<Utc>, id: &SubTaskId, status: SubtaskStatus, tool: Option<String>) {
        let (event, artifacts, failure) = match &status {
            SubtaskStatus::Ready => (EventKind::Ready, vec![], None),
            SubtaskStatus::Running => (EventKind::Running, vec![], None),
            SubtaskStatus::Done { artifacts } => (EventKind::Done, artifacts.clone(), None),
            SubtaskStatus::Failed(f) => (EventKind::Failed, vec![], Some(f.clone())),
            SubtaskStatus::Pending => unreachable!("pending is the initial state only"),
        };
        debug_assert!(!self.status[id].is_terminal(), "terminal states are final");
        self.trace.push(ExecutionEvent {
            seq: self.trace.len(),
            at,
            subtask: id.clone(),
            event,
            tool,
            artifacts,
            failure,
        });
        self.status.insert(id.clone(), status);
    }
}

/// Group subtasks into ready-sets: every subtask in set k depends only on
/// subtasks in earlier sets. Sets keep graph order.
pub fn schedule(graph: &TaskGraph) -> Result<Vec<Vec<SubTaskId>>, ExecutorError> {
    let index = graph.index_map();
    let n = graph.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, st) in graph.subtasks.iter().enumerate() {
        for d in &st.deps {
            let &j = index
                .get(d)
                .ok_or_else(|| ExecutorError::InvalidGraph(format!("{} depends on missing {d}", st.id)))?;
            indegree[i] += 1;
            dependents[j].push(i);
        }
    }
    let mut levels = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut placed = 0;
    while !current.is_empty() {
        placed += current.len();
        let mut next = Vec::new();
        for &v in &current {
            for &w in &dependents[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        levels.push(current.iter().map(|&i| graph.subtasks[i].id.clone()).collect());
        current = next;
    }
    if placed != n {
        return Err(ExecutorError::InvalidGraph("dependency cycle".into()));
    }
    Ok(levels)
}

/// Resolve every argument of `subtask` to a stored artifact. Literals become
/// fresh text artifacts, but only once every reference has resolved.
pub fn bind_inputs(
    subtask: &SubTask,
    spec: &TaskSpec,
    produced: &HashMap<SubTaskId, Vec<ArtifactId>>,
    store: &mut ArtifactStore,
) -> Result<BTreeMap<String, Artifact>, BindError> {
    let check = |slot: &str, found: Modality| match spec.slot_modality(slot) {
        Some(expected) if expected != found => Err(BindError::ModalityMismatch {
            slot: slot.to_string(),
            expected,
            found,
        }),
        _ => Ok(()),
    };
    let mut bound = BTreeMap::new();
    let mut literals = Vec::new();
    for (slot, value) in &subtask.args {
        let artifact = match value {
            ArgValue::Literal(text) => {
                check(slot, Modality::Text)?;
                literals.push((slot.clone(), text.clone()));
                continue;
            }
            ArgValue::ArtifactRef(id) => store
                .get(id)
                .cloned()
                .ok_or_else(|| BindError::UnresolvedRef(id.to_string()))?,
            ArgValue::TaskOutputRef { task, output } => {
                let ids = produced
                    .get(task)
                    .ok_or_else(|| BindError::UnresolvedRef(task.to_string()))?;
                let pick = match output {
                    None => ids.first(),
                    Some(name) => ids
                        .iter()
                        .find(|id| store.get(id).and_then(|a| a.slot.as_deref()) == Some(name.as_str())),
                };
                let id = pick.ok_or_else(|| match output {
                    Some(name) => BindError::UnresolvedRef(format!("{task}.{name}")),
                    None => BindError::UnresolvedRef(task.to_string()),
                })?;
                store
                    .get(id)
                    .cloned()
                    .ok_or_else(|| BindError::UnresolvedRef(id.to_string()))?
            }
        };
        check(slot, artifact.modality)?;
        bound.insert(slot.clone(), artifact);
    }
    for (slot, text) in literals {
        bound.insert(slot, store.put_text(text, Provenance::UserInput, None));
    }
    Ok(bound)
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Subtasks of one ready-set run concurrently up to this many.
    pub parallelism: usize,
    pub timeout: Duration,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            parallelism: 1,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Everything a run reads besides the graph and the session's store.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub tasks: &'a TaskRegistry,
    pub tools: &'a ToolRegistry,
    pub policy: &'a SelectionPolicy,
    /// Request text, shown to an LLM-judged selector.
    pub request: &'a str,
    pub llm: Option<&'a LlmClient>,
}

struct Job {
    id: SubTaskId,
    tool: ToolDescriptor,
    task: String,
    output: Modality,
    inputs: BTreeMap<String, BoundInput>,
    ctx: AdapterContext,
    started: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Executor {
    config: ExecutorConfig,
    ledger: Arc<ResourceLedger>,
}

impl Executor {
    pub fn new(config: ExecutorConfig, ledger: Arc<ResourceLedger>) -> Self {
        Self { config, ledger }
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Arc<ResourceLedger> {
        &self.ledger
    }

    /// Execute `graph`. Failures are recorded per subtask; dependents of a
    /// failed subtask are marked skipped and independent branches go on.
    pub fn run(&self, graph: &TaskGraph, store: &mut ArtifactStore, ctx: RunContext<'_>) -> ExecutionState {
        let mut state = ExecutionState::new(graph.clone());
        let clock = store.clock().clone();
        let levels = match schedule(graph) {
            Ok(levels) => levels,
            Err(e) => {
                for id in graph.ids() {
                    state.push(clock.now(), id, SubtaskStatus::Failed(Failure::new(FailureClass::InvalidGraph, e.to_string())), None);
                }
                return state;
            }
        };
        let mut produced: HashMap<SubTaskId, Vec<ArtifactId>> = HashMap::new();
        let width = self.config.parallelism.max(1);

        for level in levels {
            let mut runnable = Vec::new();
            for id in level {
                let st = graph.get(&id).expect("scheduled ids exist");
                if let Some(dep) = st.deps.iter().find(|d| matches!(state.status[*d], SubtaskStatus::Failed(_))) {
                    let f = Failure::new(FailureClass::Skipped, format!("dependency {dep} failed"));
                    state.push(clock.now(), &id, SubtaskStatus::Failed(f), None);
                } else {
                    state.push(clock.now(), &id, SubtaskStatus::Ready, None);
                    runnable.push(st);
                }
            }
            for chunk in runnable.chunks(width) {
                let mut jobs = Vec::new();
                for st in chunk {
                    match self.prepare(st, store, &ctx, &produced, &mut state) {
                        Ok(job) => jobs.push(job),
                        Err(f) => state.push(clock.now(), &st.id, SubtaskStatus::Failed(f), None),
                    }
                }
                for job in &mut jobs {
                    job.started = clock.now();
                    state.push(job.started, &job.id, SubtaskStatus::Running, Some(job.tool.id.clone()));
                }
                let results: Vec<Result<Vec<ToolOutput>, Failure>> = if jobs.len() == 1 {
                    vec![self.execute(&jobs[0])]
                } else {
                    thread::scope(|s| {
                        let handles: Vec<_> = jobs.iter().map(|job| s.spawn(|| self.execute(job))).collect();
                        handles
                            .into_iter()
                            .map(|h| {
                                h.join().unwrap_or_else(|_| {
                                    Err(Failure::new(FailureClass::AdapterFailure, "tool thread panicked"))
                                })
                            })
                            .collect()
                    })
                };
                for (job, result) in jobs.into_iter().zip(results) {
                    let outcome = result.and_then(|outputs| Self::register(&job, outputs, store));
                    let now = clock.now();
                    match outcome {
                        Ok(ids) => {
                            state.invocations.push(ToolInvocation {
                                subtask: job.id.clone(),
                                tool_id: job.tool.id.clone(),
                                task: job.task.clone(),
                                bound_inputs: job.inputs.iter().map(|(k, b)| (k.clone(), b.artifact.id.clone())).collect(),
                                started: job.started,
                                finished: now,
                            });
                            produced.insert(job.id.clone(), ids.clone());
                            state.push(now, &job.id, SubtaskStatus::Done { artifacts: ids }, Some(job.tool.id.clone()));
                        }
                        Err(f) => state.push(now, &job.id, SubtaskStatus::Failed(f), Some(job.tool.id.clone())),
                    }
                }
            }
        }
        state
    }

    fn prepare(
        &self,
        st: &SubTask,
        store: &mut ArtifactStore,
        ctx: &RunContext<'_>,
        produced: &HashMap<SubTaskId, Vec<ArtifactId>>,
        state: &mut ExecutionState,
    ) -> Result<Job, Failure> {
        let spec = ctx
            .tasks
            .lookup(&st.task)
            .map_err(|e| Failure::new(FailureClass::UnknownTask, e.to_string()))?
            .clone();
        let selection = ctx
            .tools
            .select_tool(&spec.name, ctx.policy, ctx.request, ctx.tasks, ctx.llm)
            .map_err(|e| match e {
                RegistryError::NoCandidates(_) => Failure::new(FailureClass::NoCandidates, e.to_string()),
                other => Failure::new(FailureClass::NoCandidates, other.to_string()),
            })?;
        let tool = ctx
            .tools
            .get(&selection.tool_id)
            .cloned()
            .expect("selected tool is registered");
        state.selections.insert(st.id.clone(), selection);

        let bound = bind_inputs(st, &spec, produced, store)?;
        let mut inputs = BTreeMap::new();
        for (slot, artifact) in bound {
            let store_err = |e: crate::store::StoreError| Failure::new(FailureClass::StoreFailure, e.to_string());
            let data = store.load(&artifact.id).map_err(store_err)?;
            let path = store.materialize(&artifact.id).map_err(store_err)?;
            inputs.insert(slot, BoundInput { artifact, data, path });
        }
        let work_name = if state.graph.request_id.is_empty() {
            st.id.to_string()
        } else {
            format!("{}-{}", state.graph.request_id, st.id)
        };
        Ok(Job {
            id: st.id.clone(),
            tool,
            task: spec.name.clone(),
            output: spec.output,
            inputs,
            ctx: AdapterContext {
                timeout: self.config.timeout,
                segment: store.segment(),
                llm: ctx.llm.cloned(),
                work_dir: store.dir().join("work").join(work_name),
            },
            started: DateTime::<Utc>::MIN_UTC,
        })
    }

    fn execute(&self, job: &Job) -> Result<Vec<ToolOutput>, Failure> {
        let _lease = self.ledger.acquire(&job.tool.id, job.tool.resource_cost)?;
        Ok(invoke(&job.tool, &job.task, &job.inputs, &job.ctx)?)
    }

    fn register(job: &Job, outputs: Vec<ToolOutput>, store: &mut ArtifactStore) -> Result<Vec<ArtifactId>, Failure> {
        if outputs.is_empty() {
            return Err(Failure::new(FailureClass::AdapterFailure, "tool produced no output"));
        }
        if let Some(bad) = outputs.iter().find(|o| o.data.modality() != job.output) {
            return Err(Failure::new(
                FailureClass::AdapterFailure,
                format!("tool returned {} where {} declares {}", bad.data.modality(), job.task, job.output),
            ));
        }
        let provenance = Provenance::ProducedBy {
            subtask: job.id.to_string(),
            tool: job.tool.id.clone(),
        };
        let mut ids = Vec::new();
        for out in outputs {
            let artifact = store
                .put(out.data, provenance.clone(), out.slot)
                .map_err(|e| Failure::new(FailureClass::StoreFailure, e.to_string()))?;
            ids.push(artifact.id);
        }
        Ok(ids)
    }
}
