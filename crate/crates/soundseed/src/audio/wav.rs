//! RIFF/WAVE reading and writing: PCM 16-bit and IEEE float32, mono or
//! stereo (downmixed to mono by channel mean on read).
//!
//! The reader treats its input as untrusted: every chunk length is checked
//! against the remaining bytes before use and no allocation is sized from an
//! unvalidated header field.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::AudioClip;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported wav feature: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Pcm16,
    Float32,
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn read_wav(path: &Path) -> Result<AudioClip, WavError> {
    let bytes = std::fs::read(path)?;
    parse_wav(&bytes)
}

/// Parses WAV bytes. Stereo is downmixed by channel mean; 16-bit PCM is
/// scaled to [-1, 1].
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::Format("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::Format("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::Format("missing WAVE form type".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(WavError::Format("truncated chunk header".into()));
        }
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        pos += 8;
        if bytes.len() - pos < size {
            return Err(WavError::Format(format!(
                "chunk {:?} claims {size} bytes but only {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - pos
            )));
        }
        let body = &bytes[pos..pos + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Format("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some(FmtChunk {
                    format: le_u16(&body[0..2]),
                    channels: le_u16(&body[2..4]),
                    sample_rate: le_u32(&body[4..8]),
                    block_align: le_u16(&body[12..14]),
                    bits: le_u16(&body[14..16]),
                });
            }
            b"data" => {
                data = Some(body);
            }
            _ => {}
        }
        pos += size;
        // Chunks are word-aligned; odd sizes carry a pad byte.
        if size % 2 == 1 && pos < bytes.len() {
            pos += 1;
        }
    }

    let fmt = fmt.ok_or_else(|| WavError::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::Format("missing data chunk".into()))?;

    if fmt.sample_rate == 0 {
        return Err(WavError::Format("sample rate is zero".into()));
    }
    if fmt.channels == 0 {
        return Err(WavError::Format("channel count is zero".into()));
    }
    if fmt.channels > 2 {
        return Err(WavError::Unsupported(format!(
            "{} channels (only mono and stereo)",
            fmt.channels
        )));
    }
    let bytes_per_sample = match (fmt.format, fmt.bits) {
        (1, 16) => 2usize,
        (3, 32) => 4usize,
        (1, bits) => {
            return Err(WavError::Unsupported(format!("{bits}-bit PCM")));
        }
        (3, bits) => {
            return Err(WavError::Unsupported(format!("{bits}-bit float")));
        }
        (code, _) => {
            return Err(WavError::Unsupported(format!("format code {code}")));
        }
    };
    let frame_bytes = bytes_per_sample * fmt.channels as usize;
    if fmt.block_align as usize != frame_bytes {
        return Err(WavError::Format(format!(
            "block align {} does not match {} bytes per frame",
            fmt.block_align, frame_bytes
        )));
    }
    if data.len() % frame_bytes != 0 {
        return Err(WavError::Format(format!(
            "data length {} is not a multiple of the {frame_bytes}-byte frame",
            data.len()
        )));
    }

    let n_frames = data.len() / frame_bytes;
    let ch = fmt.channels as usize;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0.0f32;
        for c in 0..ch {
            let off = f * frame_bytes + c * bytes_per_sample;
            let v = match bytes_per_sample {
                2 => le_u16(&data[off..off + 2]) as i16 as f32 / 32768.0,
                _ => {
                    let raw = f32::from_le_bytes([
                        data[off],
                        data[off + 1],
                        data[off + 2],
                        data[off + 3],
                    ]);
                    if !raw.is_finite() {
                        return Err(WavError::Format("non-finite float sample".into()));
                    }
                    raw
                }
            };
            acc += v;
        }
        samples.push(acc / ch as f32);
    }
    Ok(AudioClip::new(samples, fmt.sample_rate))
}

pub fn write_wav(clip: &AudioClip, path: &Path, depth: BitDepth) -> Result<(), WavError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_wav(clip, depth))?;
    Ok(())
}

/// Serializes a mono clip. Samples outside [-1, 1] are clipped before
/// integer quantization; the float path is lossless.
pub fn encode_wav(clip: &AudioClip, depth: BitDepth) -> Vec<u8> {
    let (format_code, bits, bytes_per_sample): (u16, u16, usize) = match depth {
        BitDepth::Pcm16 => (1, 16, 2),
        BitDepth::Float32 => (3, 32, 4),
    };
    let data_len = clip.len() * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    let byte_rate = clip.sample_rate * bytes_per_sample as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let clipped = s.clamp(-1.0, 1.0);
        match depth {
            BitDepth::Pcm16 => {
                // Symmetric 1/32768 scale so the read-back error stays
                // within half an LSB (one LSB at exactly +1.0).
                let q = (clipped * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            BitDepth::Float32 => {
                out.extend_from_slice(&clipped.to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_clip(n: usize, seed: u64) -> AudioClip {
        let mut rng = SeededRng::from_seed(seed);
        AudioClip::new((0..n).map(|_| rng.range(-1.0, 1.0)).collect(), 8000)
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = random_clip(100, 1);
        write_wav(&clip, &path, BitDepth::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 100);
        assert_eq!(back.sample_rate, 8000);
        for (a, b) in clip.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = random_clip(257, 2);
        write_wav(&clip, &path, BitDepth::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, clip.samples);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_wav(&random_clip(10, 3), BitDepth::Pcm16);
        bytes[0..4].copy_from_slice(b"JUNK");
        let err = parse_wav(&bytes).unwrap_err();
        assert!(matches!(err, WavError::Format(_)), "{err}");
    }

    #[test]
    fn opposite_stereo_channels_downmix_to_zero() {
        // Hand-build a stereo PCM16 file with channels x and -x.
        let n = 50usize;
        let mut data = Vec::new();
        for i in 0..n {
            let v = ((i as i32 * 331) % 20000 - 10000) as i16;
            data.extend_from_slice(&v.to_le_bytes());
            data.extend_from_slice(&(-v).to_le_bytes());
        }
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&data);

        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.len(), n);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn empty_clip_writes_valid_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let clip = AudioClip::new(vec![], 8000);
        write_wav(&clip, &path, BitDepth::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 44);
    }

    #[test]
    fn out_of_range_samples_are_clipped() {
        let clip = AudioClip::new(vec![2.0, -3.0, 0.5], 8000);
        let bytes = encode_wav(&clip, BitDepth::Pcm16);
        let back = parse_wav(&bytes).unwrap();
        assert!((back.samples[0] - 1.0).abs() < 2.0 / 32768.0);
        assert!((back.samples[1] + 1.0) < 2.0 / 32768.0);
    }

    #[test]
    fn unsupported_bit_depth_is_distinct_error() {
        let mut bytes = encode_wav(&random_clip(4, 4), BitDepth::Pcm16);
        // Patch bits-per-sample to 24 and block align accordingly.
        bytes[34] = 24;
        bytes[32] = 3;
        let err = parse_wav(&bytes).unwrap_err();
        assert!(matches!(err, WavError::Unsupported(_)), "{err}");
    }

    #[test]
    fn truncated_data_chunk_is_rejected() {
        let bytes = encode_wav(&random_clip(64, 5), BitDepth::Pcm16);
        let err = parse_wav(&bytes[..bytes.len() - 7]).unwrap_err();
        assert!(matches!(err, WavError::Format(_)), "{err}");
    }
}
