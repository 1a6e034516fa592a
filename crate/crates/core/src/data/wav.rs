//! RIFF/WAVE reader and writer for 16-bit PCM mono.

use std::fs;
use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{format_err, invalid, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a WAV byte buffer. Samples are scaled by `1/32768`.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(format_err(bytes.len() as u64, "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(format_err(0, "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_err(8, "missing WAVE tag"));
    }

    let mut pos = 12;
    let mut sample_rate = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(format_err(bytes.len() as u64, "no data chunk before end of file"));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let available = bytes.len() - body;
        match id {
            b"fmt " => {
                if size < 16 || available < 16 {
                    return Err(format_err(body as u64, format!("fmt chunk too short ({size} bytes)")));
                }
                let mut format = u16_at(bytes, body);
                if format == FORMAT_EXTENSIBLE && size >= 26 && available >= 26 {
                    // The sub-format GUID starts with the plain format code.
                    format = u16_at(bytes, body + 24);
                }
                if format != FORMAT_PCM {
                    return Err(format_err(body as u64, format!("unsupported format code {format}, need PCM")));
                }
                let channels = u16_at(bytes, body + 2);
                if channels != 1 {
                    return Err(format_err(
                        (body + 2) as u64,
                        format!("{channels} channels, only mono is supported"),
                    ));
                }
                let bits = u16_at(bytes, body + 14);
                if bits != 16 {
                    return Err(format_err((body + 14) as u64, format!("{bits}-bit samples, need 16")));
                }
                let rate = u32_at(bytes, body + 4);
                if rate == 0 {
                    return Err(format_err((body + 4) as u64, "sample rate is zero"));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| format_err(pos as u64, "data chunk before fmt chunk"))?;
                if size > available {
                    return Err(format_err(
                        bytes.len() as u64,
                        format!("data chunk declares {size} bytes but only {available} remain"),
                    ));
                }
                if size % 2 != 0 {
                    return Err(format_err(body as u64, format!("odd data length {size} for 16-bit samples")));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {}
        }
        // Chunks are word aligned.
        let next = body
            .checked_add(size + (size & 1))
            .ok_or_else(|| format_err(pos as u64, "chunk size overflows"))?;
        if next > bytes.len() {
            return Err(format_err(
                bytes.len() as u64,
                format!("chunk '{}' runs past end of file", String::from_utf8_lossy(id)),
            ));
        }
        pos = next;
    }
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes).map_err(|e| match e {
        crate::Error::Format { offset, detail } => crate::Error::Format {
            offset,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Encodes a clip as 16-bit PCM, rounding `x * 32768` and saturating.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let data_len = clip
        .len()
        .checked_mul(2)
        .filter(|&n| n <= u32::MAX as usize - 36)
        .ok_or_else(|| invalid("clip too long for a WAV file"))?;
    let rate = clip.sample_rate();
    let mut buf = Vec::with_capacity(44 + data_len);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    buf.extend_from_slice(b"WAVEfmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&rate.to_le_bytes());
    buf.extend_from_slice(&rate.saturating_mul(2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        buf.extend_from_slice(&q.to_le_bytes());
    }
    Ok(buf)
}

pub fn save_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_wav(clip)?)?;
    Ok(())
}
