//! Minimal RIFF/WAVE reader and writer for mono 16-bit PCM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Wave {
    pub sample_rate: u32,
    /// Samples in `[-1, 1)`.
    pub samples: Vec<f64>,
}

pub fn decode_wav(bytes: &[u8], what: &str) -> Result<Wave> {
    let err = |off: usize, msg: &str| Error::format(what, off as u64, msg.to_string());
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err(0, "not a RIFF/WAVE file"));
    }
    let u16_at = |p: usize| u16::from_le_bytes([bytes[p], bytes[p + 1]]);
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes"));
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if bytes.len() - body < size {
            return Err(err(bytes.len(), "chunk runs past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(err(body, "short fmt chunk"));
                }
                format = Some((
                    u16_at(body),
                    u16_at(body + 2),
                    u32_at(body + 4),
                    u16_at(body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| err(pos, "data chunk before fmt chunk"))?;
                if tag != 1 || bits != 16 {
                    return Err(err(pos, "only 16-bit PCM is supported"));
                }
                if channels != 1 {
                    return Err(err(
                        pos,
                        &format!("expected mono, found {channels} channels"),
                    ));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(Wave {
                    sample_rate: rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(err(bytes.len(), "no data chunk"))
}

/// Encodes samples, clamping to the 16-bit range.
pub fn encode_wav(wave: &Wave) -> Vec<u8> {
    let data_len = (wave.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend(b"RIFF");
    out.extend((36 + data_len).to_le_bytes());
    out.extend(b"WAVEfmt ");
    out.extend(16u32.to_le_bytes());
    out.extend(1u16.to_le_bytes());
    out.extend(1u16.to_le_bytes());
    out.extend(wave.sample_rate.to_le_bytes());
    out.extend((wave.sample_rate * 2).to_le_bytes());
    out.extend(2u16.to_le_bytes());
    out.extend(16u16.to_le_bytes());
    out.extend(b"data");
    out.extend(data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend(q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Wave> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, &path.display().to_string())
}

pub fn write_wav(wave: &Wave, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(wave)).map_err(|e| Error::io(path, e))
}
