//! Canonical RIFF/WAVE reading and writing (PCM16 and IEEE float32).

use super::{AudioBuffer, AudioError};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

const PCM16_SCALE: f32 = 32767.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Pcm16,
    #[default]
    Float32,
}

impl BitDepth {
    fn bytes_per_sample(self) -> usize {
        match self {
            BitDepth::Pcm16 => 2,
            BitDepth::Float32 => 4,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            BitDepth::Pcm16 => FORMAT_PCM,
            BitDepth::Float32 => FORMAT_IEEE_FLOAT,
        }
    }
}

fn decode_err(field: &'static str, detail: impl Into<String>) -> AudioError {
    AudioError::Decode {
        field,
        detail: detail.into(),
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE byte sequence holding 16-bit PCM or 32-bit float
/// samples in one or two channels.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 {
        return Err(decode_err("riff header", format!("only {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(decode_err("riff header", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(decode_err("riff header", "missing WAVE tag"));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // Writers that stream often leave the data size unpatched; take what is there.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(decode_err("fmt chunk", format!("length {} < 16", body.len())));
                }
                let mut tag = read_u16(body, 0);
                if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    tag = read_u16(body, 24);
                }
                format = Some(Format {
                    tag,
                    channels: read_u16(body, 2),
                    sample_rate: read_u32(body, 4),
                    bits: read_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }

    let format = format.ok_or_else(|| decode_err("fmt chunk", "missing"))?;
    let data = data.ok_or_else(|| decode_err("data chunk", "missing"))?;
    let channels = format.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(decode_err("channels", format!("{} (expected 1 or 2)", channels)));
    }
    if format.sample_rate == 0 {
        return Err(decode_err("sample rate", "zero"));
    }
    let depth = match (format.tag, format.bits) {
        (FORMAT_PCM, 16) => BitDepth::Pcm16,
        (FORMAT_IEEE_FLOAT, 32) => BitDepth::Float32,
        (tag, bits) => {
            return Err(decode_err(
                "encoding",
                format!("format tag {tag} with {bits} bits per sample is unsupported"),
            ))
        }
    };

    let frame_bytes = depth.bytes_per_sample() * channels;
    let frames = data.len() / frame_bytes;
    let mut planar = vec![Vec::with_capacity(frames); channels];
    for frame in data.chunks_exact(frame_bytes) {
        for (ch, sample) in frame.chunks_exact(depth.bytes_per_sample()).enumerate() {
            let v = match depth {
                BitDepth::Pcm16 => {
                    let raw = i16::from_le_bytes([sample[0], sample[1]]);
                    (raw as f32 / PCM16_SCALE).max(-1.0)
                }
                BitDepth::Float32 => {
                    f32::from_le_bytes([sample[0], sample[1], sample[2], sample[3]])
                }
            };
            planar[ch].push(v);
        }
    }
    AudioBuffer::new(planar, format.sample_rate)
}

/// Encodes `buf` with a canonical 44-byte header.
pub fn encode_wav(buf: &AudioBuffer, depth: BitDepth) -> Result<Vec<u8>, AudioError> {
    if buf.is_empty() {
        return Err(AudioError::EmptyBuffer);
    }
    let channels = buf.num_channels();
    let bps = depth.bytes_per_sample();
    let data_len = buf.len() * channels * bps;
    let mut out = Vec::with_capacity(44 + data_len);

    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&depth.format_tag().to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * (channels * bps) as u32).to_le_bytes());
    out.extend_from_slice(&((channels * bps) as u16).to_le_bytes());
    out.extend_from_slice(&((bps * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    for i in 0..buf.len() {
        for ch in buf.channels() {
            let x = ch[i];
            match depth {
                BitDepth::Pcm16 => {
                    let q = (x.clamp(-1.0, 1.0) * PCM16_SCALE).round() as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                BitDepth::Float32 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    Ok(out)
}
