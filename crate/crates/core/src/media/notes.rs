//! Note-list text form: a `tpq=<n> tempo=<us>` header followed by one
//! `pitch start_tick duration_ticks velocity` line per note.

use super::{MediaError, NoteEvent, Score, DEFAULT_TEMPO_US};

/// Flattens all tracks into one start-ordered list.
pub fn score_to_text(score: &Score) -> String {
    let mut notes: Vec<NoteEvent> = score.tracks.iter().flatten().copied().collect();
    notes.sort_by_key(|n| n.start_tick);
    let mut out = format!("tpq={} tempo={}\n", score.ticks_per_quarter, score.tempo);
    for n in notes {
        out.push_str(&format!(
            "{} {} {} {}\n",
            n.pitch, n.start_tick, n.duration_ticks, n.velocity
        ));
    }
    out
}

pub fn text_to_score(text: &str) -> Result<Score, MediaError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hline, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or(MediaError::ParseError {
            line: 1,
            message: "missing header line".into(),
        })?;

    let mut tpq: Option<u16> = None;
    let mut tempo = DEFAULT_TEMPO_US;
    for field in header.split_whitespace() {
        let err = || MediaError::ParseError {
            line: hline,
            message: format!("bad header field `{field}`"),
        };
        let (key, value) = field.split_once('=').ok_or_else(err)?;
        match key {
            "tpq" => tpq = Some(value.parse().map_err(|_| err())?),
            "tempo" => tempo = value.parse().map_err(|_| err())?,
            _ => return Err(err()),
        }
    }
    let tpq = tpq.ok_or(MediaError::ParseError {
        line: hline,
        message: "header lacks tpq=".into(),
    })?;

    let mut notes = Vec::new();
    for (line, content) in lines {
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(MediaError::ParseError {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize, what: &str| -> Result<u32, MediaError> {
            fields[i].parse::<u32>().map_err(|_| MediaError::ParseError {
                line,
                message: format!("{what} `{}` is not a number", fields[i]),
            })
        };
        let pitch = num(0, "pitch")?;
        let start = num(1, "start tick")?;
        let duration = num(2, "duration")?;
        let velocity = num(3, "velocity")?;
        if pitch > 127 || velocity == 0 || velocity > 127 || duration == 0 {
            return Err(MediaError::ParseError {
                line,
                message: "note out of range".into(),
            });
        }
        notes.push(NoteEvent::new(pitch as u8, velocity as u8, start, duration));
    }

    let mut score = Score::with_track(tpq, notes);
    score.tempo = tempo;
    score.validate().map_err(|e| MediaError::ParseError {
        line: hline,
        message: e.to_string(),
    })?;
    Ok(score)
}

/// ABC notation import is not implemented.
pub fn abc_to_score(_text: &str) -> Result<Score, MediaError> {
    Err(MediaError::Unsupported("ABC notation import".into()))
}
