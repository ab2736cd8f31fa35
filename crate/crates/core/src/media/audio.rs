use serde::{Deserialize, Serialize};

use super::MediaError;

pub const SUPPORTED_SAMPLE_RATES: [u32; 6] = [16_000, 22_050, 24_000, 32_000, 44_100, 48_000];

/// Planar PCM16 audio, one or two channels of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<i16>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<i16>>) -> Result<Self, MediaError> {
        if !SUPPORTED_SAMPLE_RATES.contains(&sample_rate) {
            return Err(MediaError::InvalidAudio(format!(
                "unsupported sample rate {sample_rate}"
            )));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(MediaError::InvalidAudio(format!(
                "{} channels (expected 1 or 2)",
                channels.len()
            )));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(MediaError::InvalidAudio("channels differ in length".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<i16>) -> Result<Self, MediaError> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silence(sample_rate: u32, channels: usize, frames: usize) -> Result<Self, MediaError> {
        Self::new(sample_rate, vec![vec![0; frames]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Vec<i16>] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[i16] {
        &self.channels[idx]
    }

    /// Samples per channel.
    pub fn frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn into_channels(self) -> Vec<Vec<i16>> {
        self.channels
    }

    fn check_compatible(&self, other: &AudioBuffer) -> Result<(), MediaError> {
        if self.sample_rate != other.sample_rate || self.channels.len() != other.channels.len() {
            return Err(MediaError::ResampleRequired(format!(
                "{} Hz x{} vs {} Hz x{}",
                self.sample_rate,
                self.channels.len(),
                other.sample_rate,
                other.channels.len()
            )));
        }
        Ok(())
    }
}

/// Maximum audio length kept for any stored artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLimit {
    pub max_seconds: f64,
}

impl SegmentLimit {
    pub fn new(max_seconds: f64) -> Self {
        assert!(max_seconds > 0.0, "segment limit must be positive");
        Self { max_seconds }
    }

    pub fn max_frames(&self, sample_rate: u32) -> usize {
        (self.max_seconds * sample_rate as f64).floor() as usize
    }
}

impl Default for SegmentLimit {
    fn default() -> Self {
        Self { max_seconds: 30.0 }
    }
}

/// Keep the head of `buf`, at most `limit` long.
pub fn trim_to_segment(buf: AudioBuffer, limit: SegmentLimit) -> AudioBuffer {
    let max = limit.max_frames(buf.sample_rate);
    if buf.frames() <= max {
        return buf;
    }
    let AudioBuffer {
        sample_rate,
        mut channels,
    } = buf;
    for ch in &mut channels {
        ch.truncate(max);
    }
    AudioBuffer {
        sample_rate,
        channels,
    }
}

/// Floor-average of the overlapping region; the longer input's tail is
/// appended unchanged.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer, MediaError> {
    a.check_compatible(b)?;
    let channels = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| {
            let (long, short) = if x.len() >= y.len() { (x, y) } else { (y, x) };
            let mut out: Vec<i16> = short
                .iter()
                .zip(long.iter())
                .map(|(&p, &q)| ((p as i32 + q as i32) >> 1) as i16)
                .collect();
            out.extend_from_slice(&long[short.len()..]);
            out
        })
        .collect();
    Ok(AudioBuffer {
        sample_rate: a.sample_rate,
        channels,
    })
}

pub fn concat(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer, MediaError> {
    a.check_compatible(b)?;
    let channels = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| x.iter().chain(y.iter()).copied().collect())
        .collect();
    Ok(AudioBuffer {
        sample_rate: a.sample_rate,
        channels,
    })
}
