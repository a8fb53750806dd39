//! Minimal RIFF/WAV reader and writer for 16-bit PCM mono at 16 kHz.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioClip, ClipMeta};
use crate::error::{Error, Result};

const REQUIRED_RATE: u32 = 16_000;

fn u16_le(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_le(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Load a 16-bit PCM mono 16 kHz WAV file. Integer samples map to [-1, 1)
/// by division by 32768.
pub fn load_wav(path: &Path, meta: ClipMeta) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_le(&bytes, off + 4) as usize;
        let body_end = (off + 8 + size).min(bytes.len());
        let body = &bytes[off + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format(format!(
                        "{}: fmt chunk truncated",
                        path.display()
                    )));
                }
                fmt = Some((
                    u16_le(body, 0),
                    u16_le(body, 2),
                    u32_le(body, 4),
                    u16_le(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        off += 8 + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt
        .ok_or_else(|| Error::Format(format!("{}: missing fmt chunk", path.display())))?;
    if format != 1 {
        return Err(Error::Format(format!(
            "{}: audio format {format}, expected PCM (1)",
            path.display()
        )));
    }
    if channels != 1 {
        return Err(Error::Format(format!(
            "{}: {channels} channels, expected mono",
            path.display()
        )));
    }
    if rate != REQUIRED_RATE {
        return Err(Error::Format(format!(
            "{}: sample rate {rate} Hz, expected {REQUIRED_RATE} Hz",
            path.display()
        )));
    }
    if bits != 16 {
        return Err(Error::Format(format!(
            "{}: {bits}-bit samples, expected 16-bit",
            path.display()
        )));
    }
    let data =
        data.ok_or_else(|| Error::Format(format!("{}: missing data chunk", path.display())))?;

    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip {
        meta,
        samples,
        sample_rate: rate,
    })
}

/// Write a clip as 16-bit PCM mono. Amplitudes are peak-normalized to 0.9
/// before quantization so arbitrary synthesis scales survive the trip; the
/// absolute scale is discarded by standardization on load anyway.
pub fn save_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let peak = clip
        .samples
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s.abs()));
    let scale = if peak > 0.0 { 0.9 / peak } else { 0.0 };

    let n = clip.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * scale * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }

    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
