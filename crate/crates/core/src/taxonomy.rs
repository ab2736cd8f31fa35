//! Modalities, task specifications and the artifact model.
//!
//! Every tool and every plan node speaks in terms of the three modalities
//! defined here. The task registry ships seeded with the thirteen built-in
//! music tasks and can be extended at runtime.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The seed task catalog.
pub const SEED_TASKS_JSON: &str = include_str!("../data/tasks.json");

/// One of the three unified data formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "symbolic")]
    SymbolicMusic,
    #[serde(rename = "audio")]
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::SymbolicMusic, Modality::Audio];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::SymbolicMusic => "symbolic",
            Modality::Audio => "audio",
        }
    }

    /// File extension used for stored payloads.
    pub fn extension(self) -> &'static str {
        match self {
            Modality::Text => "txt",
            Modality::SymbolicMusic => "mid",
            Modality::Audio => "wav",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Modality::Text => "text/plain; charset=utf-8",
            Modality::SymbolicMusic => "audio/midi",
            Modality::Audio => "audio/wav",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Modality> {
        match ext.to_ascii_lowercase().as_str() {
            "txt" | "text" | "json" => Some(Modality::Text),
            "mid" | "midi" => Some(Modality::SymbolicMusic),
            "wav" => Some(Modality::Audio),
            _ => None,
        }
    }

    pub fn from_content_type(ct: &str) -> Option<Modality> {
        let base = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
        match base.as_str() {
            "audio/wav" | "audio/x-wav" | "audio/wave" | "audio/vnd.wave" => Some(Modality::Audio),
            "audio/midi" | "audio/x-midi" | "audio/mid" => Some(Modality::SymbolicMusic),
            _ if base.starts_with("text/") => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "symbolic" | "symbolic-music" | "midi" => Ok(Modality::SymbolicMusic),
            "audio" => Ok(Modality::Audio),
            other => Err(TaxonomyError::UnknownModality(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Generation,
    Understanding,
    Auxiliary,
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskCategory::Generation => "generation",
            TaskCategory::Understanding => "understanding",
            TaskCategory::Auxiliary => "auxiliary",
        };
        f.write_str(s)
    }
}

/// A registered task: a name with fixed input/output modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub input: Modality,
    pub output: Modality,
    pub category: TaskCategory,
    #[serde(default)]
    pub description: String,
    /// Optional secondary input slots beyond `input`, with their modality.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_slots: BTreeMap<String, Modality>,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        input: Modality,
        output: Modality,
        category: TaskCategory,
        description: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            category,
            description: description.into(),
            extra_slots: BTreeMap::new(),
        }
    }

    /// Modality expected in the named argument slot, if the slot is known.
    pub fn slot_modality(&self, slot: &str) -> Option<Modality> {
        if slot == "input" {
            Some(self.input)
        } else {
            self.extra_slots.get(slot).copied()
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("task `{0}` is already registered")]
    DuplicateTask(String),
    #[error("invalid task name `{0}`")]
    InvalidName(String),
    #[error("task `{0}` not found")]
    NotFound(String),
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("malformed task catalog: {0}")]
    Catalog(String),
}

/// Task names are lowercase, hyphen separated segments of `[a-z0-9]`;
/// `/` may join words inside a segment (`artist/track-search`).
pub fn is_valid_task_name(name: &str) -> bool {
    name.split('-').all(|segment| {
        !segment.is_empty()
            && segment.split('/').all(|word| {
                !word.is_empty()
                    && word
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
            })
    })
}

/// Registry of task specifications.
///
/// Mutations bump a generation counter so prompt caches built from the
/// catalog can tell when they are stale.
#[derive(Debug, Clone, Default)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, TaskSpec>,
    order: Vec<String>,
    aliases: BTreeMap<String, String>,
    generation: u64,
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the thirteen built-in tasks, plus the
    /// `text-to-music` alias.
    pub fn seeded() -> Self {
        let mut reg = Self::from_json(SEED_TASKS_JSON).expect("seed task catalog is valid");
        reg.add_alias("text-to-music", "text-to-symbolic-music")
            .expect("alias target is seeded");
        reg
    }

    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let specs: Vec<TaskSpec> =
            serde_json::from_str(json).map_err(|e| TaxonomyError::Catalog(e.to_string()))?;
        let mut reg = Self::new();
        for spec in specs {
            reg.register(spec, false)?;
        }
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.list()).expect("task specs serialize")
    }

    pub fn register(&mut self, spec: TaskSpec, replace: bool) -> Result<(), TaxonomyError> {
        if !is_valid_task_name(&spec.name) {
            return Err(TaxonomyError::InvalidName(spec.name));
        }
        if self.tasks.contains_key(&spec.name) {
            if !replace {
                return Err(TaxonomyError::DuplicateTask(spec.name));
            }
        } else {
            self.order.push(spec.name.clone());
        }
        self.aliases.remove(&spec.name);
        self.tasks.insert(spec.name.clone(), spec);
        self.generation += 1;
        Ok(())
    }

    pub fn add_alias(&mut self, alias: &str, target: &str) -> Result<(), TaxonomyError> {
        if !self.tasks.contains_key(target) {
            return Err(TaxonomyError::NotFound(target.to_string()));
        }
        if !is_valid_task_name(alias) {
            return Err(TaxonomyError::InvalidName(alias.to_string()));
        }
        if self.tasks.contains_key(alias) {
            return Err(TaxonomyError::DuplicateTask(alias.to_string()));
        }
        self.aliases.insert(alias.to_string(), target.to_string());
        self.generation += 1;
        Ok(())
    }

    /// Resolve aliases to the canonical task name.
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn lookup(&self, name: &str) -> Result<&TaskSpec, TaxonomyError> {
        self.tasks
            .get(self.canonical(name))
            .ok_or_else(|| TaxonomyError::NotFound(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tasks.contains_key(self.canonical(name))
    }

    /// Specs in registration order.
    pub fn list(&self) -> Vec<&TaskSpec> {
        self.order.iter().filter_map(|n| self.tasks.get(n)).collect()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// True iff the output of `upstream` can feed the primary input of
/// `downstream`.
pub fn check_chain(upstream: &TaskSpec, downstream: &TaskSpec) -> bool {
    upstream.output == downstream.input
}

/// Session-scoped artifact handle, `res-<n>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(String);

impl ArtifactId {
    pub fn from_index(n: u64) -> Self {
        ArtifactId(format!("res-{n}"))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let n = s.strip_prefix("res-")?;
        if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(ArtifactId(s.to_string()))
    }

    pub fn index(&self) -> u64 {
        self.0[4..].parse().unwrap_or(0)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Monotonic `res-<n>` allocator. Ids are never reused.
#[derive(Debug)]
pub struct IdAllocator {
    next: AtomicU64,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::starting_after(0)
    }

    /// Continue numbering after `last` (used when a session is reloaded).
    pub fn starting_after(last: u64) -> Self {
        Self {
            next: AtomicU64::new(last + 1),
        }
    }

    pub fn allocate(&self) -> ArtifactId {
        ArtifactId::from_index(self.next.fetch_add(1, Ordering::SeqCst))
    }
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Inline { text: String },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    UserInput,
    ProducedBy { subtask: String, tool: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: ArtifactId,
    pub modality: Modality,
    pub payload: Payload,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
    /// Named output slot when a tool produced several outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    /// Audio duration in seconds, recorded when the artifact is stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
}
