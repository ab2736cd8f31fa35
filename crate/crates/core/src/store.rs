//! Per-session artifact storage.
//!
//! Text lives inline in the index; symbolic and audio payloads are written
//! once under `<root>/<session>/res-<n>.<ext>` and never modified.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::media::{self, AudioBuffer, MediaError, Score, SegmentLimit};
use crate::taxonomy::{Artifact, ArtifactId, IdAllocator, Modality, Payload, Provenance};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact {0} not found")]
    NotFound(ArtifactId),
    #[error("payload does not decode as {modality}: {source}")]
    Decode {
        modality: Modality,
        #[source]
        source: MediaError,
    },
    #[error("text payload is not valid UTF-8")]
    NotUtf8,
    #[error("artifact storage I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded artifact contents.
#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactData {
    Text(String),
    Score(Score),
    Audio(AudioBuffer),
}

impl ArtifactData {
    pub fn modality(&self) -> Modality {
        match self {
            ArtifactData::Text(_) => Modality::Text,
            ArtifactData::Score(_) => Modality::SymbolicMusic,
            ArtifactData::Audio(_) => Modality::Audio,
        }
    }

    /// Decode raw payload bytes of the declared modality.
    pub fn decode(modality: Modality, bytes: &[u8]) -> Result<Self, StoreError> {
        match modality {
            Modality::Text => String::from_utf8(bytes.to_vec())
                .map(ArtifactData::Text)
                .map_err(|_| StoreError::NotUtf8),
            Modality::SymbolicMusic => media::read_midi(bytes)
                .map(ArtifactData::Score)
                .map_err(|source| StoreError::Decode { modality, source }),
            Modality::Audio => media::read_wav(bytes)
                .map(ArtifactData::Audio)
                .map_err(|source| StoreError::Decode { modality, source }),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, MediaError> {
        match self {
            ArtifactData::Text(t) => Ok(t.as_bytes().to_vec()),
            ArtifactData::Score(s) => media::write_midi(s),
            ArtifactData::Audio(a) => Ok(media::write_wav(a)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactStore {
    #[serde(skip)]
    dir: PathBuf,
    #[serde(skip)]
    segment: SegmentLimit,
    #[serde(skip, default = "default_clock")]
    clock: Arc<dyn Clock>,
    #[serde(skip)]
    ids: IdAllocator,
    index: IndexMap<ArtifactId, Artifact>,
}

fn default_clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}

impl ArtifactStore {
    pub fn new(dir: impl Into<PathBuf>, segment: SegmentLimit, clock: Arc<dyn Clock>) -> Self {
        Self {
            dir: dir.into(),
            segment,
            clock,
            ids: IdAllocator::new(),
            index: IndexMap::new(),
        }
    }

    /// Re-attach runtime context after deserializing the index.
    pub fn attach(&mut self, dir: impl Into<PathBuf>, segment: SegmentLimit, clock: Arc<dyn Clock>) {
        self.dir = dir.into();
        self.segment = segment;
        self.clock = clock;
        let last = self.index.keys().map(ArtifactId::index).max().unwrap_or(0);
        self.ids = IdAllocator::starting_after(last);
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn segment(&self) -> SegmentLimit {
        self.segment
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, id: &ArtifactId) -> Option<&Artifact> {
        self.index.get(id)
    }

    pub fn contains(&self, id: &ArtifactId) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Artifact> {
        self.index.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ArtifactId> {
        self.index.keys()
    }

    pub fn put_text(&mut self, text: impl Into<String>, provenance: Provenance, slot: Option<String>) -> Artifact {
        let artifact = Artifact {
            id: self.ids.allocate(),
            modality: Modality::Text,
            payload: Payload::Inline { text: text.into() },
            provenance,
            created_at: self.clock.now(),
            slot,
            duration_seconds: None,
        };
        self.index.insert(artifact.id.clone(), artifact.clone());
        artifact
    }

    /// Store decoded data; audio is trimmed to the segment limit first.
    pub fn put(&mut self, data: ArtifactData, provenance: Provenance, slot: Option<String>) -> Result<Artifact, StoreError> {
        let (data, duration) = match data {
            ArtifactData::Text(text) => return Ok(self.put_text(text, provenance, slot)),
            ArtifactData::Audio(buf) => {
                let buf = media::trim_to_segment(buf, self.segment);
                let d = buf.duration_seconds();
                (ArtifactData::Audio(buf), Some(d))
            }
            other => (other, None),
        };
        let modality = data.modality();
        let bytes = data
            .encode()
            .map_err(|source| StoreError::Decode { modality, source })?;
        let id = self.ids.allocate();
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("{id}.{}", modality.extension()));
        fs::write(&path, &bytes)?;
        let artifact = Artifact {
            id: id.clone(),
            modality,
            payload: Payload::File { path },
            provenance,
            created_at: self.clock.now(),
            slot,
            duration_seconds: duration,
        };
        self.index.insert(id, artifact.clone());
        Ok(artifact)
    }

    /// Decode `bytes` as `modality` and store them.
    pub fn put_bytes(&mut self, modality: Modality, bytes: &[u8], provenance: Provenance) -> Result<Artifact, StoreError> {
        let data = ArtifactData::decode(modality, bytes)?;
        self.put(data, provenance, None)
    }

    pub fn read_bytes(&self, id: &ArtifactId) -> Result<Vec<u8>, StoreError> {
        let artifact = self.get(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        match &artifact.payload {
            Payload::Inline { text } => Ok(text.as_bytes().to_vec()),
            Payload::File { path } => Ok(fs::read(path)?),
        }
    }

    pub fn load(&self, id: &ArtifactId) -> Result<ArtifactData, StoreError> {
        let artifact = self.get(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        match &artifact.payload {
            Payload::Inline { text } => Ok(ArtifactData::Text(text.clone())),
            Payload::File { path } => ArtifactData::decode(artifact.modality, &fs::read(path)?),
        }
    }

    /// Filesystem path of the payload, materializing inline text to a
    /// `.txt` file on first request.
    pub fn materialize(&self, id: &ArtifactId) -> Result<PathBuf, StoreError> {
        let artifact = self.get(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        match &artifact.payload {
            Payload::File { path } => Ok(path.clone()),
            Payload::Inline { text } => {
                fs::create_dir_all(&self.dir)?;
                let path = self.dir.join(format!("{id}.txt"));
                if !path.exists() {
                    fs::write(&path, text)?;
                }
                Ok(path)
            }
        }
    }
}
