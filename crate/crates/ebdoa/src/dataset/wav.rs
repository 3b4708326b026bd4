//! Minimal RIFF/WAVE reader for 16-bit PCM source material.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every external source file must already have; the pipeline
/// performs no resampling.
pub const REQUIRED_SAMPLE_RATE: u32 = 16_000;

fn wav_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Wav { path: path.to_path_buf(), detail: detail.into() }
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits_per_sample: u16,
}

/// Reads a mono or multi-channel 16-bit PCM WAVE file, returning the first
/// channel scaled to `[-1, 1)` together with the file's sample rate.
///
/// Only uncompressed 16-bit PCM at 16 kHz is accepted; anything else is
/// reported as a [`Error::Wav`] with the offending property named.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = std::fs::read(path).map_err(|e| wav_err(path, format!("read failed: {e}")))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF/WAVE file"));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12usize;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| wav_err(path, "truncated chunk"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(path, "fmt chunk too short"));
                }
                format = Some(Format {
                    channels: read_u16(body, 2),
                    sample_rate: read_u32(body, 4),
                    block_align: read_u16(body, 12),
                    bits_per_sample: read_u16(body, 14),
                });
                let audio_format = read_u16(body, 0);
                if audio_format != 1 {
                    return Err(wav_err(
                        path,
                        format!("unsupported audio format tag {audio_format}, only PCM (1) is supported"),
                    ));
                }
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // RIFF chunks are padded to even offsets.
        at = body_end + (size & 1);
    }

    let format = format.ok_or_else(|| wav_err(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| wav_err(path, "missing data chunk"))?;

    if format.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!("unsupported bit depth {}, only 16-bit PCM is supported", format.bits_per_sample),
        ));
    }
    if format.channels == 0 {
        return Err(wav_err(path, "fmt chunk declares zero channels"));
    }
    if format.sample_rate != REQUIRED_SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!(
                "sample rate {} Hz, required {} Hz (no resampling is performed)",
                format.sample_rate, REQUIRED_SAMPLE_RATE
            ),
        ));
    }
    let block_align = format.block_align as usize;
    if block_align != 2 * format.channels as usize {
        return Err(wav_err(path, format!("inconsistent block alignment {block_align}")));
    }

    let frames = data.len() / block_align;
    let mut samples = Vec::with_capacity(frames);
    for frame in 0..frames {
        let raw = i16::from_le_bytes([data[frame * block_align], data[frame * block_align + 1]]);
        samples.push(f64::from(raw) / 32768.0);
    }
    Ok((samples, format.sample_rate))
}
