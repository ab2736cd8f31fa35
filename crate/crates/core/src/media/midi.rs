//! Standard MIDI File (format 0/1) reader and writer at note/tempo level.
//!
//! Reading honors note-on, note-off (including note-on with velocity 0) and
//! the first tempo meta event; everything else is skipped. Overlapping notes
//! of the same pitch in one track pair on/off events first-in first-out.

use std::collections::{HashMap, VecDeque};

use super::{MediaError, NoteEvent, Score, DEFAULT_TEMPO_US};

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, MediaError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| MediaError::TruncatedChunk("unexpected end of track".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MediaError> {
        if self.remaining() < n {
            return Err(MediaError::TruncatedChunk("unexpected end of track".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn varlen(&mut self) -> Result<u32, MediaError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MediaError::InvalidScore("variable-length quantity longer than 4 bytes".into()))
    }
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(buf[i] | cont);
    }
}

fn chunk<'a>(bytes: &'a [u8], pos: usize, expect: &[u8; 4]) -> Result<(&'a [u8], usize), MediaError> {
    if bytes.len() < pos + 8 {
        return Err(MediaError::TruncatedChunk(format!(
            "{} header",
            String::from_utf8_lossy(expect)
        )));
    }
    if &bytes[pos..pos + 4] != expect {
        return Err(MediaError::InvalidScore(format!(
            "expected {} chunk",
            String::from_utf8_lossy(expect)
        )));
    }
    let len = u32::from_be_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
    let end = pos + 8 + len;
    if end > bytes.len() {
        return Err(MediaError::TruncatedChunk(format!(
            "{} declares {len} bytes, {} available",
            String::from_utf8_lossy(expect),
            bytes.len() - pos - 8
        )));
    }
    Ok((&bytes[pos + 8..end], end))
}

pub fn read_midi(bytes: &[u8]) -> Result<Score, MediaError> {
    if bytes.len() < 4 || &bytes[0..4] != b"MThd" {
        return Err(MediaError::NotMidi);
    }
    let (header, mut pos) = chunk(bytes, 0, b"MThd")?;
    if header.len() < 6 {
        return Err(MediaError::TruncatedChunk("MThd shorter than 6 bytes".into()));
    }
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MediaError::UnsupportedEncoding(format!("SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MediaError::UnsupportedEncoding("SMPTE time division".into()));
    }

    let mut tempo: Option<u32> = None;
    let mut tracks = Vec::with_capacity(ntracks as usize);
    for _ in 0..ntracks {
        // Skip foreign chunks between tracks.
        while bytes.len() >= pos + 8 && &bytes[pos..pos + 4] != b"MTrk" {
            let (_, next) = chunk(bytes, pos, &bytes[pos..pos + 4].try_into().unwrap())?;
            pos = next;
        }
        let (body, next) = chunk(bytes, pos, b"MTrk")?;
        pos = next;
        tracks.push(read_track(body, &mut tempo)?);
    }
    let mut score = Score {
        ticks_per_quarter: division,
        tempo: tempo.unwrap_or(DEFAULT_TEMPO_US),
        tracks,
    };
    score.sort();
    Ok(score)
}

fn read_track(body: &[u8], tempo: &mut Option<u32>) -> Result<Vec<NoteEvent>, MediaError> {
    let mut cur = Cursor::new(body);
    let mut tick: u32 = 0;
    let mut running: Option<u8> = None;
    // (channel, pitch) -> queue of (note index)
    let mut open: HashMap<(u8, u8), VecDeque<usize>> = HashMap::new();
    let mut notes: Vec<NoteEvent> = Vec::new();
    let mut closed: Vec<bool> = Vec::new();

    while cur.remaining() > 0 {
        tick = tick.saturating_add(cur.varlen()?);
        let first = cur.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            let s = running.ok_or_else(|| {
                MediaError::InvalidScore("running status without a prior status byte".into())
            })?;
            cur.pos -= 1;
            s
        };
        match status {
            0xff => {
                running = None;
                let kind = cur.u8()?;
                let len = cur.varlen()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x51 if len == 3 && tempo.is_none() => {
                        *tempo = Some(u32::from_be_bytes([0, data[0], data[1], data[2]]));
                    }
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.varlen()? as usize;
                cur.take(len)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let data_len = if matches!(status & 0xf0, 0xc0 | 0xd0) { 1 } else { 2 };
                let data = cur.take(data_len)?;
                let kind = status & 0xf0;
                let is_on = kind == 0x90 && data[1] > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && data[1] == 0);
                if is_on {
                    open.entry((channel, data[0]))
                        .or_default()
                        .push_back(notes.len());
                    notes.push(NoteEvent::new(data[0], data[1], tick, 0));
                    closed.push(false);
                } else if is_off {
                    if let Some(idx) = open.get_mut(&(channel, data[0])).and_then(VecDeque::pop_front) {
                        notes[idx].duration_ticks = tick - notes[idx].start_tick;
                        closed[idx] = true;
                    }
                }
            }
            _ => {
                return Err(MediaError::InvalidScore(format!("unexpected status byte {status:#04x}")));
            }
        }
    }
    // Zero-length notes and notes never released are dropped.
    Ok(notes
        .into_iter()
        .zip(closed)
        .filter(|(n, done)| *done && n.duration_ticks > 0)
        .map(|(n, _)| n)
        .collect())
}

pub fn write_midi(score: &Score) -> Result<Vec<u8>, MediaError> {
    score.validate()?;
    let ntracks = score.tracks.len().max(1);
    let format: u16 = if ntracks == 1 { 0 } else { 1 };
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&format.to_be_bytes());
    out.extend_from_slice(&(ntracks as u16).to_be_bytes());
    out.extend_from_slice(&score.ticks_per_quarter.to_be_bytes());

    let empty = Vec::new();
    for t in 0..ntracks {
        let notes = score.tracks.get(t).unwrap_or(&empty);
        let channel = (t % 16) as u8;
        // (tick, order, status, pitch, velocity); offs sort before ons.
        let mut events: Vec<(u32, u8, u8, u8, u8)> = Vec::with_capacity(notes.len() * 2);
        for n in notes {
            events.push((n.start_tick, 1, 0x90 | channel, n.pitch, n.velocity));
            events.push((n.end_tick(), 0, 0x80 | channel, n.pitch, 0));
        }
        events.sort_by_key(|e| (e.0, e.1));

        let mut body = Vec::new();
        if t == 0 {
            push_varlen(&mut body, 0);
            body.extend_from_slice(&[0xff, 0x51, 0x03]);
            body.extend_from_slice(&score.tempo.to_be_bytes()[1..]);
        }
        let mut last = 0u32;
        for (tick, _, status, pitch, vel) in events {
            push_varlen(&mut body, tick - last);
            last = tick;
            body.extend_from_slice(&[status, pitch, vel]);
        }
        push_varlen(&mut body, 0);
        body.extend_from_slice(&[0xff, 0x2f, 0x00]);

        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}
