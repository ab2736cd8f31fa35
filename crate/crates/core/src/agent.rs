//! The assembled agent: plan, select, execute and respond for each chat
//! message, with per-session state.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::config::Config;
use crate::executor::{ExecutionEvent, Executor, ExecutorConfig, ResourceLedger, RunContext, SubtaskStatus};
use crate::llm::{LlmClient, MockLlm, MockScript};
use crate::planner::{inject_task_flow, load_exemplars, validate_graph_with_artifacts, Planner, PlannerError, TaskGraph};
use crate::registry::{AttrValue, RegistryError, SelectionPolicy, ToolDescriptor, ToolRegistry, SEED_TOOLS_JSON};
use crate::responder::{respond, ResultBundle, SessionRepo, SessionState, Turn, DEFAULT_TRUNCATION_BUDGET};
use crate::store::{ArtifactStore, StoreError};
use crate::taxonomy::{Artifact, ArtifactId, Modality, Payload, Provenance, TaskRegistry, TaskSpec, TaxonomyError, SEED_TASKS_JSON};

/// Chat text starting with this runs the JSON plan that follows directly.
pub const FLOW_PREFIX: &str = "/flow";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("request text is empty")]
    EmptyRequest,
    #[error("invalid session id `{0}`")]
    InvalidSessionId(String),
    #[error("session `{0}` not found")]
    UnknownSession(String),
    #[error("artifact {0} not found")]
    UnknownArtifact(String),
    #[error("artifact {0} exists in several sessions; name the session")]
    AmbiguousArtifact(String),
    #[error("payload does not decode as {modality}: {reason}")]
    DecodeFailure { modality: Modality, reason: String },
    #[error("unsupported modality `{0}`")]
    UnsupportedModality(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("storage: {0}")]
    Storage(String),
    #[error("cannot load {what}: {reason}")]
    Startup { what: String, reason: String },
}

impl From<StoreError> for AgentError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => AgentError::UnknownArtifact(id.to_string()),
            StoreError::Decode { modality, source } => AgentError::DecodeFailure {
                modality,
                reason: source.to_string(),
            },
            StoreError::NotUtf8 => AgentError::DecodeFailure {
                modality: Modality::Text,
                reason: "not valid UTF-8".into(),
            },
            StoreError::Io(e) => AgentError::Storage(e.to_string()),
        }
    }
}

/// Artifact as listed to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactRef {
    pub id: ArtifactId,
    pub modality: Modality,
    pub content_type: &'static str,
    /// Relative URL of the artifact endpoint.
    pub url: String,
    /// Payload file on disk; inline text has none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
}

impl ArtifactRef {
    pub fn new(session_id: &str, a: &Artifact) -> Self {
        Self {
            id: a.id.clone(),
            modality: a.modality,
            content_type: a.modality.content_type(),
            url: format!("/artifacts/{}?session={session_id}", a.id),
            path: match &a.payload {
                Payload::File { path } => Some(path.display().to_string()),
                Payload::Inline { .. } => None,
            },
            provenance: a.provenance.clone(),
            slot: a.slot.clone(),
            duration_seconds: a.duration_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatResult {
    pub session_id: String,
    pub response: String,
    pub plan: TaskGraph,
    /// Terminal state of each subtask, keyed by subtask id.
    pub status: BTreeMap<String, SubtaskStatus>,
    /// Chosen tool per subtask.
    pub tools: BTreeMap<String, String>,
    pub trace: Vec<ExecutionEvent>,
    /// Artifacts produced by this request, in topological order.
    pub artifacts: Vec<ArtifactRef>,
    /// The model was unreachable and a fallback answer was given.
    pub degraded: bool,
    /// Why no plan ran, when planning or validation failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub turns: Vec<Turn>,
    pub artifacts: Vec<ArtifactRef>,
}

type SessionHandle = Arc<Mutex<SessionState>>;

pub struct MusicAgent {
    config: Config,
    tasks: RwLock<TaskRegistry>,
    tools: RwLock<ToolRegistry>,
    policy: RwLock<SelectionPolicy>,
    planner: Planner,
    llm: LlmClient,
    executor: Executor,
    repo: SessionRepo,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for MusicAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MusicAgent")
            .field("llm", &self.llm)
            .field("artifacts", &self.repo.artifacts_root())
            .finish_non_exhaustive()
    }
}

fn read(path: &std::path::Path) -> Result<String, AgentError> {
    fs::read_to_string(path).map_err(|e| AgentError::Startup {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn startup(what: &std::path::Path) -> impl Fn(String) -> AgentError + '_ {
    move |reason| AgentError::Startup {
        what: what.display().to_string(),
        reason,
    }
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Backend chosen by configuration: a scripted mock when given, a remote
/// endpoint when configured, otherwise an always-unavailable backend.
pub fn llm_from_config(config: &Config, mock: Option<MockScript>) -> LlmClient {
    let client = match mock {
        Some(script) => LlmClient::new(Arc::new(MockLlm::new(script))),
        #[cfg(feature = "net")]
        None if !config.llm.endpoint.is_empty() => LlmClient::new(Arc::new(crate::llm::RemoteChat::from_env(
            config.llm.endpoint.clone(),
            config.llm.model.clone(),
            std::time::Duration::from_secs_f64(config.llm.timeout_s),
        ))),
        None => LlmClient::new(Arc::new(MockLlm::unavailable())),
    };
    client
        .with_temperatures(config.llm.temperatures)
        .with_max_tokens(config.llm.max_tokens)
}

impl MusicAgent {
    pub fn new(config: Config, llm: LlmClient) -> Result<Self, AgentError> {
        Self::with_clock(config, llm, Arc::new(SystemClock))
    }

    /// Build from `config`; timestamps come from `clock`.
    pub fn with_clock(config: Config, llm: LlmClient, clock: Arc<dyn Clock>) -> Result<Self, AgentError> {
        config.validate().map_err(|e| AgentError::Startup {
            what: "config".into(),
            reason: e.to_string(),
        })?;
        let p = &config.paths;
        let mut tasks = match &p.tasks {
            Some(path) => TaskRegistry::from_json(&read(path)?).map_err(|e| startup(path)(e.to_string()))?,
            None => TaskRegistry::from_json(SEED_TASKS_JSON)?,
        };
        for path in &p.extra_tasks {
            let specs: Vec<TaskSpec> = serde_json::from_str(&read(path)?).map_err(|e| startup(path)(e.to_string()))?;
            for spec in specs {
                tasks.register(spec, false).map_err(|e| startup(path)(e.to_string()))?;
            }
        }
        let mut tools = match &p.tools {
            Some(path) => ToolRegistry::from_json(&read(path)?, &tasks).map_err(|e| startup(path)(e.to_string()))?,
            None => ToolRegistry::from_json(SEED_TOOLS_JSON, &tasks)?,
        };
        for path in &p.extra_tools {
            let extra = ToolRegistry::from_json(&read(path)?, &tasks).map_err(|e| startup(path)(e.to_string()))?;
            for tool in extra.list() {
                tools.register_tool(tool.clone(), &tasks).map_err(|e| startup(path)(e.to_string()))?;
            }
        }
        let planner = match &p.exemplars {
            Some(path) => Planner::new(load_exemplars(&read(path)?)?)?,
            None => Planner::seeded(),
        };
        let ledger = ResourceLedger::new(config.executor.resource_budget, config.resource_wait());
        let executor = Executor::new(
            ExecutorConfig {
                parallelism: config.executor.parallelism,
                timeout: config.tool_timeout(),
            },
            Arc::new(ledger),
        );
        Ok(Self {
            repo: SessionRepo::new(&p.sessions, &p.artifacts),
            policy: RwLock::new(config.selection.clone()),
            tasks: RwLock::new(tasks),
            tools: RwLock::new(tools),
            planner,
            llm,
            executor,
            sessions: Mutex::new(HashMap::new()),
            clock,
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn llm(&self) -> &LlmClient {
        &self.llm
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn tasks(&self) -> Vec<TaskSpec> {
        self.tasks.read().expect("tasks lock").list().into_iter().cloned().collect()
    }

    pub fn tools(&self) -> Vec<ToolDescriptor> {
        self.tools.read().expect("tools lock").list().into_iter().cloned().collect()
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy.read().expect("policy lock").clone()
    }

    pub fn set_policy(&self, policy: SelectionPolicy) -> Result<(), AgentError> {
        policy.validate()?;
        *self.policy.write().expect("policy lock") = policy;
        Ok(())
    }

    pub fn register_task(&self, spec: TaskSpec, replace: bool) -> Result<(), AgentError> {
        Ok(self.tasks.write().expect("tasks lock").register(spec, replace)?)
    }

    pub fn register_tool(&self, tool: ToolDescriptor) -> Result<(), AgentError> {
        let tasks = self.tasks.read().expect("tasks lock");
        Ok(self.tools.write().expect("tools lock").register_tool(tool, &tasks)?)
    }

    pub fn update_tool_attributes(
        &self,
        tool_id: &str,
        patch: BTreeMap<String, AttrValue>,
    ) -> Result<ToolDescriptor, AgentError> {
        Ok(self
            .tools
            .write()
            .expect("tools lock")
            .update_tool_attributes(tool_id, patch)?
            .clone())
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, SessionHandle>> {
        self.sessions.lock().expect("session table poisoned")
    }

    fn open(&self, session_id: &str, create: bool) -> Result<SessionHandle, AgentError> {
        if !valid_session_id(session_id) {
            return Err(AgentError::InvalidSessionId(session_id.to_string()));
        }
        let mut table = self.sessions();
        if let Some(h) = table.get(session_id) {
            return Ok(h.clone());
        }
        let loaded = self
            .repo
            .load(session_id, self.config.segment(), self.clock.clone())
            .map_err(|e| AgentError::Storage(e.to_string()))?;
        let state = match loaded {
            Some(s) => s,
            None if create => {
                let store = ArtifactStore::new(self.repo.artifact_dir(session_id), self.config.segment(), self.clock.clone());
                SessionState::new(session_id, store, DEFAULT_TRUNCATION_BUDGET)
            }
            None => return Err(AgentError::UnknownSession(session_id.to_string())),
        };
        let handle = Arc::new(Mutex::new(state));
        table.insert(session_id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Handle of an existing or new session.
    pub fn session(&self, session_id: &str) -> Result<SessionHandle, AgentError> {
        self.open(session_id, true)
    }

    /// Fresh session id not used in memory or on disk.
    pub fn new_session_id(&self) -> String {
        let table = self.sessions();
        (1..)
            .map(|n| format!("session-{n}"))
            .find(|id| !table.contains_key(id) && !self.repo.session_path(id).exists())
            .expect("unbounded range")
    }

    fn save(&self, session: &SessionState) -> Result<(), AgentError> {
        self.repo.save(session).map_err(|e| AgentError::Storage(e.to_string()))
    }

    /// Run one chat message through the full pipeline. A message starting
    /// with `/flow` carries its own JSON plan and skips the planner.
    pub fn chat(&self, session_id: Option<&str>, text: &str) -> Result<ChatResult, AgentError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(AgentError::EmptyRequest);
        }
        let session_id = match session_id {
            Some(id) => id.to_string(),
            None => self.new_session_id(),
        };
        let handle = self.session(&session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        let llm = self.llm.with_log(session.usage_log().clone());
        // Registry snapshot: updates apply to later requests.
        let tasks = self.tasks.read().expect("tasks lock").clone();
        let tools = self.tools.read().expect("tools lock").clone();
        let policy = self.policy();

        let mut result = ChatResult {
            session_id: session_id.clone(),
            response: String::new(),
            plan: TaskGraph::default(),
            status: BTreeMap::new(),
            tools: BTreeMap::new(),
            trace: Vec::new(),
            artifacts: Vec::new(),
            degraded: false,
            error: None,
        };

        let planned = match text.strip_prefix(FLOW_PREFIX).filter(|rest| rest.is_empty() || rest.starts_with(char::is_whitespace)) {
            Some(flow) => inject_task_flow(&session, flow.trim()),
            None => self.planner.plan(&llm, &tasks, &session, text).map(|o| o.graph),
        };
        let mut graph = match planned {
            Ok(g) => g,
            Err(PlannerError::EmptyRequest) => return Err(AgentError::EmptyRequest),
            Err(PlannerError::Llm(e)) => {
                result.degraded = true;
                result.error = Some(format!("LlmUnavailable: {e}"));
                result.response = "The language model is unavailable right now, so I could not plan this request. \
                                   Please try again later, or send a plan directly with /flow."
                    .into();
                self.finish_turn(&mut session, text, &result)?;
                return Ok(result);
            }
            Err(e) => {
                result.error = Some(format!("{}: {e}", planner_error_class(&e)));
                result.response = format!("I could not turn that request into a plan ({e}). Could you rephrase it?");
                self.finish_turn(&mut session, text, &result)?;
                return Ok(result);
            }
        };
        if graph.request_id.is_empty() {
            graph.request_id = format!("{session_id}-{}", session.turns().len() / 2 + 1);
        }
        result.plan = graph.clone();

        let store = session.artifacts();
        let report = validate_graph_with_artifacts(&graph, &tasks, |id| ArtifactId::parse(id).and_then(|id| store.get(&id).map(|a| a.modality)));
        if !report.is_accepted() {
            result.error = Some(format!("InvalidPlan: {}", report.summary()));
            result.response = format!("The plan for this request is not executable: {}", report.summary());
            self.finish_turn(&mut session, text, &result)?;
            return Ok(result);
        }

        let state = self.executor.run(
            &graph,
            session.artifacts_mut(),
            RunContext {
                tasks: &tasks,
                tools: &tools,
                policy: &policy,
                request: text,
                llm: Some(&llm),
            },
        );
        let bundle = ResultBundle::new(state).expect("executor returns a finished state");
        let reply = respond(&llm, &session, text, &bundle);
        result.response = reply.text;
        result.degraded = reply.degraded;
        result.status = bundle.state.status.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        result.tools = bundle
            .state
            .selections
            .iter()
            .map(|(k, s)| (k.to_string(), s.tool_id.clone()))
            .collect();
        result.trace = bundle.state.trace.clone();
        let store = session.artifacts();
        result.artifacts = bundle
            .produced()
            .iter()
            .filter_map(|id| store.get(id))
            .map(|a| ArtifactRef::new(&session_id, a))
            .collect();
        self.finish_turn(&mut session, text, &result)?;
        Ok(result)
    }

    fn finish_turn(&self, session: &mut SessionState, text: &str, result: &ChatResult) -> Result<(), AgentError> {
        session.append_turn(Turn::user(text));
        session.append_turn(Turn::agent(
            result.response.clone(),
            result.artifacts.iter().map(|a| a.id.clone()).collect(),
        ));
        self.save(session)
    }

    /// Store user-supplied bytes as an artifact of `session_id`.
    pub fn upload_artifact(&self, session_id: &str, bytes: &[u8], modality: Modality) -> Result<ArtifactRef, AgentError> {
        let handle = self.session(session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        let artifact = session.artifacts_mut().put_bytes(modality, bytes, Provenance::UserInput)?;
        self.save(&session)?;
        Ok(ArtifactRef::new(session_id, &artifact))
    }

    pub fn session_view(&self, session_id: &str) -> Result<SessionView, AgentError> {
        let handle = self.open(session_id, false)?;
        let session = handle.lock().expect("session poisoned");
        Ok(SessionView {
            session_id: session_id.to_string(),
            turns: session.turns().to_vec(),
            artifacts: session.artifacts().iter().map(|a| ArtifactRef::new(session_id, a)).collect(),
        })
    }

    pub fn clear_history(&self, session_id: &str) -> Result<(), AgentError> {
        let handle = self.open(session_id, false)?;
        let mut session = handle.lock().expect("session poisoned");
        session.clear_history();
        self.save(&session)
    }

    /// Metadata and payload bytes of an artifact. Without a session the id
    /// must be unique among sessions held in memory.
    pub fn artifact(&self, session_id: Option<&str>, id: &str) -> Result<(Artifact, Vec<u8>), AgentError> {
        let aid = ArtifactId::parse(id).ok_or_else(|| AgentError::UnknownArtifact(id.to_string()))?;
        let handle = match session_id {
            Some(sid) => self.open(sid, false)?,
            None => {
                let table = self.sessions();
                let mut holders = table
                    .values()
                    .filter(|h| h.lock().expect("session poisoned").artifacts().contains(&aid));
                let first = holders.next().cloned().ok_or_else(|| AgentError::UnknownArtifact(id.to_string()))?;
                if holders.next().is_some() {
                    return Err(AgentError::AmbiguousArtifact(id.to_string()));
                }
                first
            }
        };
        let session = handle.lock().expect("session poisoned");
        let artifact = session
            .artifacts()
            .get(&aid)
            .cloned()
            .ok_or_else(|| AgentError::UnknownArtifact(id.to_string()))?;
        let bytes = session.artifacts().read_bytes(&aid)?;
        Ok((artifact, bytes))
    }
}

fn planner_error_class(e: &PlannerError) -> &'static str {
    match e {
        PlannerError::EmptyRequest => "EmptyRequest",
        PlannerError::NoPlanFound => "NoPlanFound",
        PlannerError::MalformedSubTask { .. } => "MalformedSubTask",
        PlannerError::DuplicateId(_) => "DuplicateId",
        PlannerError::BudgetTooSmall { .. } => "BudgetTooSmall",
        PlannerError::Exemplars(_) => "Exemplars",
        PlannerError::Llm(_) => "LlmUnavailable",
    }
}
