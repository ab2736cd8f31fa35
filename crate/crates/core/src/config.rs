//! TOML service configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::Temperatures;
use crate::media::SegmentLimit;
use crate::registry::SelectionPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config value `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("configured file {0} does not exist")]
    MissingFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Chat-completion URL. Empty means no remote backend is configured.
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_tokens: u32,
    pub temperatures: Temperatures,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "gpt-3.5-turbo".into(),
            timeout_s: 60.0,
            max_tokens: 1024,
            temperatures: Temperatures::default(),
        }
    }
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Task catalog; the built-in seed when unset.
    pub tasks: Option<PathBuf>,
    /// Tool catalog; the built-in seed when unset.
    pub tools: Option<PathBuf>,
    /// Planner exemplars; the built-in set when unset.
    pub exemplars: Option<PathBuf>,
    /// Registered on top of the catalogs, in order.
    pub extra_tasks: Vec<PathBuf>,
    pub extra_tools: Vec<PathBuf>,
    pub artifacts: PathBuf,
    pub sessions: PathBuf,
    /// Static files served under `/` (the web console build).
    pub static_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            tasks: None,
            tools: None,
            exemplars: None,
            extra_tasks: Vec::new(),
            extra_tools: Vec::new(),
            artifacts: PathBuf::from("var/artifacts"),
            sessions: PathBuf::from("var/sessions"),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorSection {
    pub parallelism: usize,
    pub timeout_s: f64,
    pub resource_budget: u32,
    /// How long an acquisition may wait for budget before failing.
    pub resource_wait_s: f64,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        Self {
            parallelism: 1,
            timeout_s: 120.0,
            resource_budget: 16,
            resource_wait_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediaSection {
    pub segment_seconds: f64,
}

impl Default for MediaSection {
    fn default() -> Self {
        Self { segment_seconds: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: LlmConfig,
    pub paths: PathsConfig,
    pub executor: ExecutorSection,
    pub media: MediaSection,
    pub selection: SelectionPolicy,
    pub server: ServerSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Load `path` and resolve relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check_files()?;
        Ok(config)
    }

    /// Defaults with data directories under `root`.
    pub fn rooted(root: impl AsRef<Path>) -> Self {
        let mut config = Self::default();
        config.resolve_paths(root.as_ref());
        config
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in [&mut p.tasks, &mut p.tools, &mut p.exemplars, &mut p.static_dir] {
            if let Some(path) = opt {
                fix(path);
            }
        }
        p.extra_tasks.iter_mut().for_each(fix);
        p.extra_tools.iter_mut().for_each(fix);
        fix(&mut p.artifacts);
        fix(&mut p.sessions);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        if self.executor.parallelism == 0 {
            return Err(ConfigError::Invalid {
                field: "executor.parallelism",
                reason: "must be positive".into(),
            });
        }
        if self.executor.resource_budget == 0 {
            return Err(ConfigError::Invalid {
                field: "executor.resource_budget",
                reason: "must be positive".into(),
            });
        }
        positive("executor.timeout_s", self.executor.timeout_s)?;
        positive("executor.resource_wait_s", self.executor.resource_wait_s)?;
        positive("media.segment_seconds", self.media.segment_seconds)?;
        positive("llm.timeout_s", self.llm.timeout_s)?;
        self.selection.validate().map_err(|e| ConfigError::Invalid {
            field: "selection",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    fn check_files(&self) -> Result<(), ConfigError> {
        let p = &self.paths;
        let files = [&p.tasks, &p.tools, &p.exemplars]
            .into_iter()
            .flatten()
            .chain(&p.extra_tasks)
            .chain(&p.extra_tools);
        for f in files {
            if !f.is_file() {
                return Err(ConfigError::MissingFile(f.clone()));
            }
        }
        Ok(())
    }

    pub fn segment(&self) -> SegmentLimit {
        SegmentLimit::new(self.media.segment_seconds)
    }

    pub fn tool_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.executor.timeout_s)
    }

    pub fn resource_wait(&self) -> Duration {
        Duration::from_secs_f64(self.executor.resource_wait_s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
