//! Unified media formats: PCM16 WAV audio, Standard MIDI scores and a
//! line-oriented note-list text form, plus the basic operations tools use
//! to interoperate (trim, mix, concatenate, convert, preview).

mod audio;
mod midi;
mod notes;
mod preview;
mod wav;

pub use audio::{concat, mix, trim_to_segment, AudioBuffer, SegmentLimit, SUPPORTED_SAMPLE_RATES};
pub use midi::{read_midi, write_midi};
pub use notes::{abc_to_score, score_to_text, text_to_score};
pub use preview::{pitch_to_hz, render_score_preview, PREVIEW_SAMPLE_RATE};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediaError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("sample rate or channel layout differs ({0}); resampling is not supported")]
    ResampleRequired(String),
    #[error("not a Standard MIDI File")]
    NotMidi,
    #[error("truncated chunk: {0}")]
    TruncatedChunk(String),
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("score has no notes")]
    EmptyScore,
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A single note in a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub velocity: u8,
    pub start_tick: u32,
    pub duration_ticks: u32,
}

impl NoteEvent {
    pub fn new(pitch: u8, velocity: u8, start_tick: u32, duration_ticks: u32) -> Self {
        Self {
            pitch,
            velocity,
            start_tick,
            duration_ticks,
        }
    }

    pub fn end_tick(&self) -> u32 {
        self.start_tick.saturating_add(self.duration_ticks)
    }

    fn check(&self) -> Result<(), MediaError> {
        if self.pitch > 127 {
            return Err(MediaError::InvalidScore(format!("pitch {} out of range", self.pitch)));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(MediaError::InvalidScore(format!(
                "velocity {} out of range",
                self.velocity
            )));
        }
        if self.duration_ticks == 0 {
            return Err(MediaError::InvalidScore("zero-length note".into()));
        }
        Ok(())
    }
}

pub const DEFAULT_TEMPO_US: u32 = 500_000;

/// Note-level symbolic music.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub ticks_per_quarter: u16,
    /// Microseconds per quarter note.
    pub tempo: u32,
    pub tracks: Vec<Vec<NoteEvent>>,
}

impl Score {
    pub fn new(ticks_per_quarter: u16) -> Self {
        Self {
            ticks_per_quarter,
            tempo: DEFAULT_TEMPO_US,
            tracks: vec![Vec::new()],
        }
    }

    pub fn with_track(ticks_per_quarter: u16, notes: Vec<NoteEvent>) -> Self {
        let mut score = Self::new(ticks_per_quarter);
        score.tracks[0] = notes;
        score.sort();
        score
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.note_count() == 0
    }

    /// Stable sort of every track by start tick.
    pub fn sort(&mut self) {
        for track in &mut self.tracks {
            track.sort_by_key(|n| n.start_tick);
        }
    }

    pub fn validate(&self) -> Result<(), MediaError> {
        if self.ticks_per_quarter == 0 || self.ticks_per_quarter > 0x7fff {
            return Err(MediaError::InvalidScore("ticks per quarter out of range".into()));
        }
        if self.tempo == 0 || self.tempo > 0xff_ffff {
            return Err(MediaError::InvalidScore("tempo out of range".into()));
        }
        for track in &self.tracks {
            for note in track {
                note.check()?;
            }
            if track.windows(2).any(|w| w[0].start_tick > w[1].start_tick) {
                return Err(MediaError::InvalidScore("track is not sorted by start tick".into()));
            }
        }
        Ok(())
    }

    /// Seconds per tick at the score's tempo.
    pub fn seconds_per_tick(&self) -> f64 {
        self.tempo as f64 / 1e6 / self.ticks_per_quarter as f64
    }
}
