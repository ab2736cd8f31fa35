use std::f64::consts::TAU;

use super::{trim_to_segment, AudioBuffer, MediaError, Score, SegmentLimit};

pub const PREVIEW_SAMPLE_RATE: u32 = 22_050;
const PEAK: f64 = 0.5 * i16::MAX as f64;

/// Equal-temperament frequency of a MIDI pitch.
pub fn pitch_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Deterministic sine rendering of every note, mono at 22050 Hz.
pub fn render_score_preview(score: &Score, limit: SegmentLimit) -> Result<AudioBuffer, MediaError> {
    if score.is_empty() {
        return Err(MediaError::EmptyScore);
    }
    let rate = PREVIEW_SAMPLE_RATE as f64;
    let spt = score.seconds_per_tick();
    let max_frames = limit.max_frames(PREVIEW_SAMPLE_RATE);
    let end_frame = score
        .tracks
        .iter()
        .flatten()
        .map(|n| (n.end_tick() as f64 * spt * rate).ceil() as usize)
        .max()
        .unwrap_or(0)
        .min(max_frames);

    let mut acc = vec![0f64; end_frame];
    for note in score.tracks.iter().flatten() {
        let start = (note.start_tick as f64 * spt * rate).round() as usize;
        let stop = ((note.end_tick() as f64 * spt * rate).round() as usize).min(end_frame);
        let freq = pitch_to_hz(note.pitch);
        let amp = PEAK * note.velocity as f64 / 127.0;
        for (k, slot) in acc.iter_mut().enumerate().take(stop).skip(start) {
            let t = (k - start) as f64 / rate;
            *slot += amp * (TAU * freq * t).sin();
        }
    }
    let samples = acc
        .into_iter()
        .map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect();
    Ok(trim_to_segment(AudioBuffer::mono(PREVIEW_SAMPLE_RATE, samples)?, limit))
}
