//! RIFF/WAVE, PCM16 little-endian only.

use super::{AudioBuffer, MediaError};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn format_name(tag: u16) -> String {
    match tag {
        2 => "ADPCM".into(),
        3 => "IEEE float".into(),
        6 => "A-law".into(),
        7 => "mu-law".into(),
        other => format!("format tag {other:#06x}"),
    }
}

pub fn read_wav(bytes: &[u8]) -> Result<AudioBuffer, MediaError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(MediaError::NotWav);
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| MediaError::TruncatedChunk("chunk size overflow".into()))?;
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(MediaError::TruncatedChunk("fmt chunk".into()));
                }
                let body = &bytes[body_start..body_end];
                let mut tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag == FORMAT_EXTENSIBLE && size >= 40 {
                    // The sub-format GUID starts with the real format tag.
                    tag = u16_at(body, 24);
                }
                if tag != FORMAT_PCM {
                    return Err(MediaError::UnsupportedEncoding(format_name(tag)));
                }
                if bits != 16 {
                    return Err(MediaError::UnsupportedEncoding(format!("{bits}-bit PCM")));
                }
                fmt = Some((channels, rate));
            }
            b"data" => {
                let (channels, rate) = fmt.ok_or_else(|| {
                    MediaError::InvalidAudio("data chunk before fmt chunk".into())
                })?;
                if body_end > bytes.len() {
                    return Err(MediaError::TruncatedChunk("data chunk".into()));
                }
                if channels == 0 || channels > 2 {
                    return Err(MediaError::UnsupportedEncoding(format!("{channels} channels")));
                }
                let data = &bytes[body_start..body_end];
                let nch = channels as usize;
                let frames = data.len() / (2 * nch);
                let mut planes = vec![Vec::with_capacity(frames); nch];
                for frame in data.chunks_exact(2 * nch) {
                    for (c, plane) in planes.iter_mut().enumerate() {
                        plane.push(i16::from_le_bytes([frame[2 * c], frame[2 * c + 1]]));
                    }
                }
                return AudioBuffer::new(rate, planes);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    Err(MediaError::TruncatedChunk("missing data chunk".into()))
}

/// Canonical 44-byte-header PCM16 file.
pub fn write_wav(buf: &AudioBuffer) -> Vec<u8> {
    let nch = buf.channel_count() as u16;
    let frames = buf.frames();
    let data_len = (frames * nch as usize * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&nch.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * nch as u32 * 2).to_le_bytes());
    out.extend_from_slice(&(nch * 2).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..frames {
        for ch in buf.channels() {
            out.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    out
}
