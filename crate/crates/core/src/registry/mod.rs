//! Tool descriptors, the task → tool map, and per-subtask tool selection.

mod select;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use select::{
    extract_first_object, score_candidates, select_deterministic, Selection, SelectionMode, SelectionPolicy,
};

use crate::taxonomy::TaskRegistry;

/// Shipped tool file: one stub per seeded task plus a second text-to-audio
/// stub.
pub const SEED_TOOLS_JSON: &str = include_str!("../../data/tools.json");

/// Remote API providers with a built-in client.
pub const REMOTE_PROVIDERS: &[&str] = &["spotify", "google"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("attribute `{0}` must be a non-negative number")]
    NegativeAttribute(String),
    #[error("no tool supports task `{0}`")]
    NoCandidates(String),
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("tool catalog: {0}")]
    Catalog(String),
}

/// Attribute value: a number (stars, downloads, ...) or free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            AttrValue::Text(_) => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(n) => write!(f, "{n}"),
            AttrValue::Text(t) => f.write_str(t),
        }
    }
}

impl From<f64> for AttrValue {
    fn from(n: f64) -> Self {
        AttrValue::Number(n)
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Text(s.to_string())
    }
}

/// How a tool is reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AdapterSpec", into = "AdapterSpec")]
pub enum AdapterKind {
    Builtin,
    /// Command line, split shell-style. `{task}`, `{out}` and `{<slot>}`
    /// placeholders are substituted; the adapter also appends the standard
    /// flags.
    Subprocess(String),
    /// Endpoint URL; `{task}` is substituted.
    Http(String),
    RemoteApi(String),
}

#[derive(Serialize, Deserialize)]
struct AdapterSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<String>,
}

impl TryFrom<AdapterSpec> for AdapterKind {
    type Error = String;

    fn try_from(spec: AdapterSpec) -> Result<Self, String> {
        let need = |t: Option<String>| t.ok_or_else(|| format!("adapter `{}` needs a template", spec.kind));
        match spec.kind.as_str() {
            "builtin" => Ok(AdapterKind::Builtin),
            "subprocess" => need(spec.template).map(AdapterKind::Subprocess),
            "http" => need(spec.template).map(AdapterKind::Http),
            "remote-api" => need(spec.template).map(AdapterKind::RemoteApi),
            other => Err(format!("unknown adapter kind `{other}`")),
        }
    }
}

impl From<AdapterKind> for AdapterSpec {
    fn from(kind: AdapterKind) -> Self {
        let (kind, template) = match kind {
            AdapterKind::Builtin => ("builtin", None),
            AdapterKind::Subprocess(t) => ("subprocess", Some(t)),
            AdapterKind::Http(t) => ("http", Some(t)),
            AdapterKind::RemoteApi(t) => ("remote-api", Some(t)),
        };
        AdapterSpec {
            kind: kind.to_string(),
            template,
        }
    }
}

impl AdapterKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AdapterKind::Builtin => "builtin",
            AdapterKind::Subprocess(_) => "subprocess",
            AdapterKind::Http(_) => "http",
            AdapterKind::RemoteApi(_) => "remote-api",
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            AdapterKind::Builtin => Ok(()),
            AdapterKind::Subprocess(t) => match shlex::split(t) {
                Some(words) if !words.is_empty() => Ok(()),
                _ => Err(format!("command template `{t}` does not split into words")),
            },
            AdapterKind::Http(t) => {
                if t.starts_with("http://") || t.starts_with("https://") {
                    Ok(())
                } else {
                    Err(format!("endpoint `{t}` is not an http(s) URL"))
                }
            }
            AdapterKind::RemoteApi(p) => {
                if REMOTE_PROVIDERS.contains(&p.as_str()) {
                    Ok(())
                } else {
                    Err(format!("unknown remote provider `{p}`"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub id: String,
    pub display_name: String,
    pub tasks: BTreeSet<String>,
    pub adapter: AdapterKind,
    #[serde(default)]
    pub resource_cost: u32,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
}

impl ToolDescriptor {
    pub fn new(id: impl Into<String>, tasks: &[&str], adapter: AdapterKind) -> Self {
        let id = id.into();
        Self {
            display_name: id.clone(),
            id,
            tasks: tasks.iter().map(|t| t.to_string()).collect(),
            adapter,
            resource_cost: 0,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_cost(mut self, cost: u32) -> Self {
        self.resource_cost = cost;
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn supports(&self, task: &str) -> bool {
        self.tasks.contains(task)
    }

    pub fn number(&self, attr: &str) -> Option<f64> {
        self.attributes.get(attr).and_then(AttrValue::as_number)
    }

    pub fn description(&self) -> &str {
        match self.attributes.get("description") {
            Some(AttrValue::Text(t)) => t,
            _ => "",
        }
    }
}

fn check_attributes<'a>(attrs: impl IntoIterator<Item = (&'a String, &'a AttrValue)>) -> Result<(), RegistryError> {
    for (key, value) in attrs {
        if let AttrValue::Number(n) = value {
            if !(n.is_finite() && *n >= 0.0) {
                return Err(RegistryError::NegativeAttribute(key.clone()));
            }
        }
    }
    Ok(())
}

/// Tools keyed by id.
///
/// Every mutation bumps a generation counter so cached selector context
/// can be rebuilt.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDescriptor>,
    generation: u64,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seeded(tasks: &TaskRegistry) -> Self {
        Self::from_json(SEED_TOOLS_JSON, tasks).expect("seed tool catalog is valid")
    }

    pub fn from_json(json: &str, tasks: &TaskRegistry) -> Result<Self, RegistryError> {
        let descs: Vec<ToolDescriptor> =
            serde_json::from_str(json).map_err(|e| RegistryError::Catalog(e.to_string()))?;
        let mut reg = Self::new();
        for d in descs {
            reg.register_tool(d, tasks)?;
        }
        Ok(reg)
    }

    /// `tools.json` form: descriptors sorted by id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.list()).expect("tools serialize")
    }

    pub fn register_tool(&mut self, mut desc: ToolDescriptor, tasks: &TaskRegistry) -> Result<(), RegistryError> {
        if desc.id.trim().is_empty() {
            return Err(RegistryError::InvalidDescriptor("empty tool id".into()));
        }
        if self.tools.contains_key(&desc.id) {
            return Err(RegistryError::DuplicateTool(desc.id));
        }
        if desc.tasks.is_empty() {
            return Err(RegistryError::InvalidDescriptor(format!("tool `{}` supports no task", desc.id)));
        }
        let mut canonical = BTreeSet::new();
        for t in &desc.tasks {
            if !tasks.contains(t) {
                return Err(RegistryError::UnknownTask(t.clone()));
            }
            canonical.insert(tasks.canonical(t).to_string());
        }
        desc.tasks = canonical;
        desc.adapter.check().map_err(RegistryError::InvalidDescriptor)?;
        check_attributes(&desc.attributes)?;
        self.tools.insert(desc.id.clone(), desc);
        self.generation += 1;
        Ok(())
    }

    /// Overwrite the listed attributes; unlisted ones are kept.
    pub fn update_tool_attributes(
        &mut self,
        tool_id: &str,
        patch: BTreeMap<String, AttrValue>,
    ) -> Result<&ToolDescriptor, RegistryError> {
        check_attributes(&patch)?;
        let tool = self
            .tools
            .get_mut(tool_id)
            .ok_or_else(|| RegistryError::UnknownTool(tool_id.to_string()))?;
        if !patch.is_empty() {
            tool.attributes.extend(patch);
            self.generation += 1;
        }
        Ok(&self.tools[tool_id])
    }

    pub fn get(&self, id: &str) -> Option<&ToolDescriptor> {
        self.tools.get(id)
    }

    /// All tools sorted by id.
    pub fn list(&self) -> Vec<&ToolDescriptor> {
        self.tools.values().collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Tools supporting `task`, sorted by id.
    pub fn candidates_for(&self, task: &str, tasks: &TaskRegistry) -> Result<Vec<&ToolDescriptor>, RegistryError> {
        if !tasks.contains(task) {
            return Err(RegistryError::UnknownTask(task.to_string()));
        }
        let name = tasks.canonical(task);
        Ok(self.tools.values().filter(|t| t.supports(name)).collect())
    }

    /// task name → supporting tool ids.
    pub fn task_map(&self) -> BTreeMap<String, Vec<String>> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for tool in self.tools.values() {
            for task in &tool.tasks {
                map.entry(task.clone()).or_default().push(tool.id.clone());
            }
        }
        map
    }
}
