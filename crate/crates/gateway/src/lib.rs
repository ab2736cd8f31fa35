//! Entry points for the music agent: an HTTP API for the web console and a
//! line-oriented chat REPL. Both drive the same [`MusicAgent`] pipeline.

pub mod http;
pub mod repl;

use std::path::Path;

use musicagent_core::agent::{llm_from_config, AgentError, MusicAgent};
use musicagent_core::config::{Config, ConfigError};
use musicagent_core::llm::MockScript;
use thiserror::Error;

pub use http::router;
pub use repl::Repl;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("cannot read mock script {path}: {reason}")]
    MockScript { path: String, reason: String },
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_mock_script(path: &Path) -> Result<MockScript, GatewayError> {
    let err = |reason: String| GatewayError::MockScript {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    MockScript::from_json(&text).map_err(|e| err(e.to_string()))
}

/// Build the agent from an optional config file and mock script. Without a
/// config file the built-in defaults apply, rooted at the working directory.
pub fn build_agent(config: Option<&Path>, mock_script: Option<&Path>) -> Result<MusicAgent, GatewayError> {
    let config = match config {
        Some(path) => Config::load(path)?,
        None => {
            let c = Config::default();
            c.validate()?;
            c
        }
    };
    let script = mock_script.map(load_mock_script).transpose()?;
    let llm = llm_from_config(&config, script);
    Ok(MusicAgent::new(config, llm)?)
}
