//! Minimal RIFF/WAVE reader and writer (16-bit PCM and 32-bit IEEE float,
//! little-endian). Multichannel input is reduced to its first channel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a WAV file and returns its first channel in [-1, 1] plus the sample rate.
pub fn load_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_wav(&bytes).map_err(|(offset, reason)| Error::Wav {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

type ParseResult<T> = std::result::Result<T, (u64, String)>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> ParseResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err((
                self.pos as u64,
                format!("truncated while reading {what} ({n} bytes needed)"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> ParseResult<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> ParseResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    encoding: WavEncoding,
    channels: u16,
    sample_rate: u32,
}

fn parse_wav(bytes: &[u8]) -> ParseResult<(Vec<f64>, u32)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err((0, "missing RIFF tag".into()));
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err((8, "missing WAVE tag".into()));
    }

    let mut format: Option<Format> = None;
    loop {
        let chunk_at = r.pos as u64;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                let body_at = r.pos;
                let tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let sample_rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                let tag = if tag == FORMAT_EXTENSIBLE {
                    r.u16("extension size")?;
                    r.u16("valid bits")?;
                    r.u32("channel mask")?;
                    r.u16("sub-format")?
                } else {
                    tag
                };
                let encoding = match (tag, bits) {
                    (FORMAT_PCM, 16) => WavEncoding::Pcm16,
                    (FORMAT_FLOAT, 32) => WavEncoding::Float32,
                    _ => {
                        return Err((
                            chunk_at,
                            format!("unsupported encoding (format {tag}, {bits} bits)"),
                        ))
                    }
                };
                if channels == 0 {
                    return Err((chunk_at, "zero channels".into()));
                }
                format = Some(Format {
                    encoding,
                    channels,
                    sample_rate,
                });
                r.pos = body_at;
                r.take(size + size % 2, "fmt chunk body")?;
            }
            b"data" => {
                let fmt =
                    format.ok_or_else(|| (chunk_at, "data chunk before fmt chunk".to_string()))?;
                let width = match fmt.encoding {
                    WavEncoding::Pcm16 => 2,
                    WavEncoding::Float32 => 4,
                };
                let frame = width * fmt.channels as usize;
                let body = r.take(size, "sample data")?;
                let samples = body
                    .chunks_exact(frame)
                    .map(|f| match fmt.encoding {
                        WavEncoding::Pcm16 => i16::from_le_bytes([f[0], f[1]]) as f64 / 32768.0,
                        WavEncoding::Float32 => f32::from_le_bytes([f[0], f[1], f[2], f[3]]) as f64,
                    })
                    .collect();
                return Ok((samples, fmt.sample_rate));
            }
            _ => {
                r.take(size + size % 2, "chunk body")?;
            }
        }
    }
}

/// Writes a mono WAV file. PCM samples are clipped to the 16-bit range.
pub fn write_wav(
    path: impl AsRef<Path>,
    samples: &[f64],
    fs: u32,
    encoding: WavEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let (tag, width) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 2u16),
        WavEncoding::Float32 => (FORMAT_FLOAT, 4u16),
    };
    let data_len = samples.len() as u32 * width as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    out.extend_from_slice(&(fs * width as u32).to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(width * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
