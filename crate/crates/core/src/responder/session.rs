use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::llm::{UsageLog, UsageRecord};
use crate::media::SegmentLimit;
use crate::store::ArtifactStore;
use crate::taxonomy::ArtifactId;

pub const DEFAULT_TRUNCATION_BUDGET: usize = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<ArtifactId>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: TurnRole::User,
            text: text.into(),
            artifacts: Vec::new(),
        }
    }

    pub fn agent(text: impl Into<String>, artifacts: Vec<ArtifactId>) -> Self {
        Self {
            role: TurnRole::Agent,
            text: text.into(),
            artifacts,
        }
    }

    /// One-line rendering used in prompts.
    pub fn render(&self) -> String {
        let role = match self.role {
            TurnRole::User => "user",
            TurnRole::Agent => "agent",
        };
        let mut line = format!("{role}: {}", self.text.replace('\n', " "));
        if !self.artifacts.is_empty() {
            let ids: Vec<&str> = self.artifacts.iter().map(ArtifactId::as_str).collect();
            line.push_str(&format!(" [artifacts: {}]", ids.join(", ")));
        }
        line.push('\n');
        line
    }
}

/// One conversation: turns, artifacts and the prompt budget.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    turns: Vec<Turn>,
    #[serde(rename = "artifacts")]
    store: ArtifactStore,
    pub truncation_budget: usize,
    #[serde(default)]
    usage: Vec<UsageRecord>,
    #[serde(skip)]
    usage_log: UsageLog,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, store: ArtifactStore, truncation_budget: usize) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            store,
            truncation_budget,
            usage: Vec::new(),
            usage_log: UsageLog::new(),
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn artifacts(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn artifacts_mut(&mut self) -> &mut ArtifactStore {
        &mut self.store
    }

    /// Appends a turn. Artifact references not present in this session's
    /// index are dropped so every referenced id stays resolvable.
    pub fn append_turn(&mut self, mut turn: Turn) {
        turn.artifacts.retain(|id| self.store.contains(id));
        self.turns.push(turn);
    }

    /// Forget the conversation; artifacts and their files stay addressable.
    pub fn clear_history(&mut self) {
        self.turns.clear();
    }

    /// Keep only the newest `n` turns.
    pub fn retain_last(&mut self, n: usize) {
        let drop = self.turns.len().saturating_sub(n);
        self.turns.drain(..drop);
    }

    pub fn usage_log(&self) -> &UsageLog {
        &self.usage_log
    }

    /// Usage records persisted with the session plus calls made since load.
    pub fn usage(&self) -> Vec<UsageRecord> {
        let mut all = self.usage.clone();
        all.extend(self.usage_log.records());
        all
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("session serializes");
        value["usage"] = serde_json::to_value(self.usage()).expect("usage serializes");
        serde_json::to_string_pretty(&value).expect("session serializes")
    }

    pub fn from_json(
        json: &str,
        artifact_dir: impl Into<PathBuf>,
        segment: SegmentLimit,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, serde_json::Error> {
        let mut state: SessionState = serde_json::from_str(json)?;
        state.store.attach(artifact_dir, segment, clock);
        Ok(state)
    }
}

/// `{sessions_dir}/{session_id}.json` persistence.
#[derive(Debug, Clone)]
pub struct SessionRepo {
    sessions_dir: PathBuf,
    artifacts_dir: PathBuf,
}

impl SessionRepo {
    pub fn new(sessions_dir: impl Into<PathBuf>, artifacts_dir: impl Into<PathBuf>) -> Self {
        Self {
            sessions_dir: sessions_dir.into(),
            artifacts_dir: artifacts_dir.into(),
        }
    }

    pub fn session_path(&self, session_id: &str) -> PathBuf {
        self.sessions_dir.join(format!("{session_id}.json"))
    }

    pub fn artifact_dir(&self, session_id: &str) -> PathBuf {
        self.artifacts_dir.join(session_id)
    }

    pub fn artifacts_root(&self) -> &Path {
        &self.artifacts_dir
    }

    pub fn save(&self, session: &SessionState) -> std::io::Result<()> {
        fs::create_dir_all(&self.sessions_dir)?;
        let path = self.session_path(&session.session_id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, session.to_json())?;
        fs::rename(tmp, path)
    }

    pub fn load(
        &self,
        session_id: &str,
        segment: SegmentLimit,
        clock: Arc<dyn Clock>,
    ) -> std::io::Result<Option<SessionState>> {
        let path = self.session_path(session_id);
        if !path.exists() {
            return Ok(None);
        }
        let json = fs::read_to_string(path)?;
        SessionState::from_json(&json, self.artifact_dir(session_id), segment, clock)
            .map(Some)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppingClock;
    use crate::taxonomy::Provenance;

    fn session(dir: &Path) -> SessionState {
        let store = ArtifactStore::new(dir.join("a"), SegmentLimit::default(), Arc::new(SteppingClock::epoch()));
        SessionState::new("s1", store, DEFAULT_TRUNCATION_BUDGET)
    }

    #[test]
    fn append_then_read_last() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = session(tmp.path());
        let turn = Turn::user("hello");
        s.append_turn(turn.clone());
        assert_eq!(s.turns().last(), Some(&turn));
    }

    #[test]
    fn clear_keeps_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = session(tmp.path());
        let a = s.artifacts_mut().put_text("x", Provenance::UserInput, None);
        for i in 0..5 {
            s.append_turn(Turn::agent(format!("t{i}"), vec![a.id.clone()]));
        }
        s.clear_history();
        assert!(s.turns().is_empty());
        assert_eq!(s.artifacts().len(), 1);
        s.clear_history();
        assert!(s.turns().is_empty());
        assert_eq!(s.artifacts().len(), 1);
    }

    #[test]
    fn unknown_artifact_refs_are_dropped() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = session(tmp.path());
        s.append_turn(Turn::agent("x", vec![ArtifactId::from_index(9)]));
        assert!(s.turns()[0].artifacts.is_empty());
    }

    #[test]
    fn persistence_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let repo = SessionRepo::new(tmp.path().join("sessions"), tmp.path().join("artifacts"));
        let store = ArtifactStore::new(repo.artifact_dir("s1"), SegmentLimit::default(), Arc::new(SteppingClock::epoch()));
        let mut s = SessionState::new("s1", store, 500);
        let a = s.artifacts_mut().put_text("lyrics", Provenance::UserInput, None);
        s.append_turn(Turn::user("hi"));
        s.append_turn(Turn::agent("here", vec![a.id.clone()]));
        repo.save(&s).unwrap();
        let back = repo
            .load("s1", SegmentLimit::default(), Arc::new(SteppingClock::epoch()))
            .unwrap()
            .unwrap();
        assert_eq!(back.turns(), s.turns());
        assert_eq!(back.truncation_budget, 500);
        assert_eq!(back.artifacts().get(&a.id), s.artifacts().get(&a.id));
        assert_eq!(back.to_json(), s.to_json());
        assert!(repo.load("nope", SegmentLimit::default(), Arc::new(SteppingClock::epoch())).unwrap().is_none());
    }
}
