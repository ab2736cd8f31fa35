//! In-process stand-ins for the neural tools. Each one honours its task's
//! modality contract and is a pure function of its inputs, so whole runs are
//! reproducible.

use std::collections::BTreeMap;

use super::invoke::{AdapterContext, AdapterError, BoundInput, ToolOutput};
use crate::llm::{ChatMessage, Purpose};
use crate::media::{self, AudioBuffer, NoteEvent, Score, SegmentLimit};
use crate::store::ArtifactData;

/// Task names with a built-in implementation.
pub const BUILTIN_TASKS: &[&str] = &[
    "text-to-symbolic-music",
    "lyric-to-melody",
    "singing-voice-synthesis",
    "text-to-audio",
    "timbre-transfer",
    "accompaniment",
    "music-classification",
    "music-separation",
    "lyric-recognition",
    "score-transcription",
    "lyric-generation",
    "render-preview",
];

const TPQ: u16 = 480;
const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn input<'a>(inputs: &'a BTreeMap<String, BoundInput>, slot: &str) -> Result<&'a ArtifactData, AdapterError> {
    inputs
        .get(slot)
        .map(|b| &b.data)
        .ok_or_else(|| AdapterError::BadInput(format!("missing `{slot}` input")))
}

fn text<'a>(inputs: &'a BTreeMap<String, BoundInput>) -> Result<&'a str, AdapterError> {
    match input(inputs, "input")? {
        ArtifactData::Text(t) => Ok(t),
        other => Err(AdapterError::BadInput(format!("expected text, got {}", other.modality()))),
    }
}

fn score<'a>(inputs: &'a BTreeMap<String, BoundInput>, slot: &str) -> Result<&'a Score, AdapterError> {
    match input(inputs, slot)? {
        ArtifactData::Score(s) => Ok(s),
        other => Err(AdapterError::BadInput(format!("expected symbolic music, got {}", other.modality()))),
    }
}

fn audio<'a>(inputs: &'a BTreeMap<String, BoundInput>) -> Result<&'a AudioBuffer, AdapterError> {
    match input(inputs, "input")? {
        ArtifactData::Audio(a) => Ok(a),
        other => Err(AdapterError::BadInput(format!("expected audio, got {}", other.modality()))),
    }
}

fn media_err(e: media::MediaError) -> AdapterError {
    AdapterError::Failed {
        reason: e.to_string(),
        exit_code: None,
        stderr: String::new(),
    }
}

/// Sixteen-note phrase in C major seeded by the description.
pub fn compose_from_text(description: &str) -> Score {
    let mut h = fnv1a(description);
    let mut notes = Vec::new();
    let mut tick = 0;
    for _ in 0..16 {
        let degree = (h % 7) as usize;
        let octave = ((h >> 3) % 2) as u8 * 12;
        let dur = if (h >> 5) % 3 == 0 { TPQ as u32 / 2 } else { TPQ as u32 };
        let vel = 80 + ((h >> 7) % 30) as u8;
        notes.push(NoteEvent::new(60 + octave + MAJOR[degree], vel, tick, dur));
        tick += dur;
        h = h.rotate_left(11).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5851_f42d;
    }
    Score::with_track(TPQ, notes)
}

/// One note per word, pitch picked from the word's hash.
pub fn melody_for_lyrics(lyrics: &str) -> Score {
    let mut notes = Vec::new();
    let mut tick = 0;
    for word in lyrics.split_whitespace().take(64) {
        let h = fnv1a(&word.to_lowercase());
        let dur = if word.chars().count() <= 3 { TPQ as u32 / 2 } else { TPQ as u32 };
        notes.push(NoteEvent::new(60 + MAJOR[(h % 7) as usize], 96, tick, dur));
        tick += dur;
    }
    if notes.is_empty() {
        notes.push(NoteEvent::new(60, 96, 0, TPQ as u32));
    }
    Score::with_track(TPQ, notes)
}

/// Adds a bass track: the root an octave below whatever the melody plays
/// on each half-note boundary, with its fifth.
pub fn add_accompaniment(melody: &Score) -> Score {
    let mut out = melody.clone();
    let lead: Vec<&NoteEvent> = melody.tracks.iter().flatten().collect();
    let end = lead.iter().map(|n| n.end_tick()).max().unwrap_or(0);
    let step = melody.ticks_per_quarter as u32 * 2;
    let mut bass = Vec::new();
    let mut tick = 0;
    while tick < end {
        let sounding = lead
            .iter()
            .filter(|n| n.start_tick <= tick && tick < n.end_tick())
            .map(|n| n.pitch)
            .min();
        if let Some(p) = sounding {
            let root = p.saturating_sub(12).max(24);
            let dur = step.min(end - tick);
            bass.push(NoteEvent::new(root, 70, tick, dur));
            bass.push(NoteEvent::new(root.saturating_add(7).min(127), 60, tick, dur));
        }
        tick += step;
    }
    if !bass.is_empty() {
        out.tracks.push(bass);
    }
    out.sort();
    out
}

fn rms(samples: &[i16]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64 / i16::MAX as f64).powi(2)).sum();
    (sum / samples.len() as f64).sqrt()
}

fn crossings(samples: &[i16]) -> usize {
    samples.windows(2).filter(|w| (w[0] < 0) != (w[1] < 0)).count()
}

/// Rule-based tagger on loudness and zero-crossing rate.
pub fn classify(buf: &AudioBuffer) -> String {
    let x = buf.channel(0);
    let level = rms(x);
    let zcr = crossings(x) as f64 / x.len().max(1) as f64;
    let brightness_hz = zcr * buf.sample_rate() as f64 / 2.0;
    let genre = match (level, brightness_hz) {
        (l, _) if l < 0.01 => "silence",
        (_, b) if b < 300.0 => "ambient",
        (l, b) if l > 0.3 && b > 1000.0 => "rock",
        (_, b) if b > 1000.0 => "electronic",
        _ => "pop",
    };
    let energy = if level < 0.1 { "low" } else if level < 0.3 { "medium" } else { "high" };
    format!(
        "genre: {genre}; energy: {energy}; rms: {level:.3}; brightness: {brightness_hz:.0} Hz; duration: {:.2} s",
        buf.duration_seconds()
    )
}

fn moving_average(x: &[i16], window: usize) -> Vec<i16> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc: i64 = 0;
    for i in 0..x.len() {
        acc += x[i] as i64;
        if i >= window {
            acc -= x[i - window] as i64;
        }
        let n = (i + 1).min(window) as i64;
        out.push((acc / n) as i16);
    }
    out
}

/// Two stems: `vocals` (high band) and `accompaniment` (low band).
pub fn separate(buf: &AudioBuffer) -> Result<(AudioBuffer, AudioBuffer), AdapterError> {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for ch in buf.channels() {
        let l = moving_average(ch, 8);
        let h = ch
            .iter()
            .zip(&l)
            .map(|(&x, &y)| (x as i32 - y as i32).clamp(i16::MIN as i32, i16::MAX as i32) as i16)
            .collect();
        low.push(l);
        high.push(h);
    }
    let rate = buf.sample_rate();
    Ok((
        AudioBuffer::new(rate, high).map_err(media_err)?,
        AudioBuffer::new(rate, low).map_err(media_err)?,
    ))
}

/// Brighter timbre by soft-clipping at double gain.
pub fn transfer_timbre(buf: &AudioBuffer) -> Result<AudioBuffer, AdapterError> {
    let channels = buf
        .channels()
        .iter()
        .map(|ch| {
            ch.iter()
                .map(|&s| {
                    let x = s as f64 / i16::MAX as f64 * 2.0;
                    (x.tanh() * i16::MAX as f64 * 0.9).round() as i16
                })
                .collect()
        })
        .collect();
    AudioBuffer::new(buf.sample_rate(), channels).map_err(media_err)
}

/// Frame-wise zero-crossing pitch tracking, merged into notes.
pub fn transcribe(buf: &AudioBuffer) -> Score {
    let x = buf.channel(0);
    let rate = buf.sample_rate() as f64;
    let frame = (rate / 10.0) as usize;
    let ticks_per_frame = TPQ as f64 * 2.0 * 0.1; // 120 bpm: one quarter = 0.5 s
    let mut notes: Vec<NoteEvent> = Vec::new();
    for (i, chunk) in x.chunks(frame).enumerate() {
        if chunk.len() < frame / 2 || rms(chunk) < 0.01 {
            continue;
        }
        let hz = crossings(chunk) as f64 * rate / (2.0 * chunk.len() as f64);
        if hz < 20.0 {
            continue;
        }
        let pitch = (69.0 + 12.0 * (hz / 440.0).log2()).round().clamp(0.0, 127.0) as u8;
        let start = (i as f64 * ticks_per_frame) as u32;
        let dur = ticks_per_frame as u32;
        match notes.last_mut() {
            Some(last) if last.pitch == pitch && last.end_tick() == start => last.duration_ticks += dur,
            _ => notes.push(NoteEvent::new(pitch, 90, start, dur)),
        }
    }
    Score::with_track(TPQ, notes)
}

fn fallback_lyrics(topic: &str) -> String {
    let topic = topic.trim();
    format!(
        "Verse: I keep thinking of {topic}\nEvery night it comes around\nChorus: Oh {topic}, carry me along\nTurn the quiet into song"
    )
}

fn lyrics(topic: &str, ctx: &AdapterContext) -> String {
    if let Some(llm) = &ctx.llm {
        let reply = llm.complete(
            Purpose::Tool,
            vec![
                ChatMessage::system("You are a lyricist. Write short song lyrics (at most eight lines) on the topic given. Reply with the lyrics only."),
                ChatMessage::user(topic.to_string()),
            ],
        );
        if let Ok(text) = reply {
            if !text.trim().is_empty() {
                return text.trim().to_string();
            }
        }
    }
    fallback_lyrics(topic)
}

fn one(data: ArtifactData) -> Vec<ToolOutput> {
    vec![ToolOutput { slot: None, data }]
}

fn preview(score: &Score, limit: SegmentLimit) -> Result<ArtifactData, AdapterError> {
    media::render_score_preview(score, limit).map(ArtifactData::Audio).map_err(media_err)
}

/// Run the built-in implementation of `task`.
pub fn run_builtin(
    task: &str,
    inputs: &BTreeMap<String, BoundInput>,
    ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    let limit = ctx.segment;
    match task {
        "text-to-symbolic-music" => Ok(one(ArtifactData::Score(compose_from_text(text(inputs)?)))),
        "lyric-to-melody" => Ok(one(ArtifactData::Score(melody_for_lyrics(text(inputs)?)))),
        "singing-voice-synthesis" => {
            let melody = match inputs.get("melody") {
                Some(_) => score(inputs, "melody")?.clone(),
                None => melody_for_lyrics(text(inputs)?),
            };
            Ok(one(preview(&melody, limit)?))
        }
        "text-to-audio" => Ok(one(preview(&compose_from_text(text(inputs)?), limit)?)),
        "render-preview" => Ok(one(preview(score(inputs, "input")?, limit)?)),
        "timbre-transfer" => Ok(one(ArtifactData::Audio(transfer_timbre(audio(inputs)?)?))),
        "accompaniment" => Ok(one(ArtifactData::Score(add_accompaniment(score(inputs, "input")?)))),
        "music-classification" => Ok(one(ArtifactData::Text(classify(audio(inputs)?)))),
        "music-separation" => {
            let (vocals, accompaniment) = separate(audio(inputs)?)?;
            Ok(vec![
                ToolOutput {
                    slot: Some("vocals".into()),
                    data: ArtifactData::Audio(vocals),
                },
                ToolOutput {
                    slot: Some("accompaniment".into()),
                    data: ArtifactData::Audio(accompaniment),
                },
            ])
        }
        "lyric-recognition" => {
            let buf = audio(inputs)?;
            let syllables = (buf.duration_seconds() * 2.0).round().clamp(1.0, 64.0) as usize;
            Ok(one(ArtifactData::Text(format!(
                "[transcribed {:.1} s] {}",
                buf.duration_seconds(),
                vec!["la"; syllables].join(" ")
            ))))
        }
        "score-transcription" => Ok(one(ArtifactData::Text(media::score_to_text(&transcribe(audio(inputs)?))))),
        "lyric-generation" => Ok(one(ArtifactData::Text(lyrics(text(inputs)?, ctx)))),
        other => Err(AdapterError::UnsupportedTask(other.to_string())),
    }
}

/// Canned responses for the remote API providers.
pub fn run_remote_stub(
    provider: &str,
    task: &str,
    inputs: &BTreeMap<String, BoundInput>,
    ctx: &AdapterContext,
) -> Result<Vec<ToolOutput>, AdapterError> {
    match (provider, task) {
        ("spotify", "artist/track-search") => {
            let query = text(inputs)?;
            let clip = preview(&compose_from_text(&format!("spotify:{query}")), SegmentLimit::new(10.0f64.min(ctx.segment.max_seconds)))?;
            Ok(one(clip))
        }
        ("google", "web-search") => {
            let query = text(inputs)?.trim();
            let h = fnv1a(query);
            Ok(one(ArtifactData::Text(format!(
                "Top results for \"{query}\":\n1. {query} - Wikipedia (en.wikipedia.org)\n2. {query}: history, style and notable recordings (allmusic.com)\n3. Discussion thread #{} about {query} (reddit.com)",
                h % 100_000
            ))))
        }
        _ => Err(AdapterError::UnsupportedTask(format!("{provider}: {task}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::render_score_preview;

    #[test]
    fn compose_is_deterministic_and_valid() {
        let a = compose_from_text("calm piano");
        assert_eq!(a, compose_from_text("calm piano"));
        assert_ne!(a, compose_from_text("angry drums"));
        a.validate().unwrap();
        assert_eq!(a.note_count(), 16);
    }

    #[test]
    fn melody_has_a_note_per_word() {
        let s = melody_for_lyrics("rain on the window pane");
        assert_eq!(s.note_count(), 5);
        s.validate().unwrap();
        assert_eq!(melody_for_lyrics("   ").note_count(), 1);
    }

    #[test]
    fn accompaniment_adds_a_track() {
        let m = melody_for_lyrics("one two three four five six");
        let acc = add_accompaniment(&m);
        assert_eq!(acc.tracks.len(), 2);
        acc.validate().unwrap();
    }

    #[test]
    fn transcription_recovers_a_sine() {
        let s = Score::with_track(480, vec![NoteEvent::new(69, 100, 0, 960)]);
        let buf = render_score_preview(&s, SegmentLimit::default()).unwrap();
        let t = transcribe(&buf);
        assert!(!t.is_empty());
        assert!(t.tracks[0].iter().all(|n| (68..=70).contains(&n.pitch)));
    }

    #[test]
    fn classification_mentions_genre() {
        let silent = AudioBuffer::silence(22_050, 1, 22_050).unwrap();
        assert!(classify(&silent).starts_with("genre: silence"));
        let s = Score::with_track(480, vec![NoteEvent::new(45, 100, 0, 960)]);
        let low = render_score_preview(&s, SegmentLimit::default()).unwrap();
        assert!(classify(&low).contains("genre: ambient"));
    }

    #[test]
    fn separation_is_two_stems_of_equal_length() {
        let s = Score::with_track(480, vec![NoteEvent::new(60, 100, 0, 480)]);
        let buf = render_score_preview(&s, SegmentLimit::default()).unwrap();
        let (v, a) = separate(&buf).unwrap();
        assert_eq!(v.frames(), buf.frames());
        assert_eq!(a.frames(), buf.frames());
    }
}
