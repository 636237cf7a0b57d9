//! Minimal RIFF/WAVE I/O, deliberately restricted to the one format the
//! datasets use: 16-bit PCM, mono. Anything else is rejected so a stray
//! file cannot silently enter a dataset with the wrong scale or layout.

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("unsupported WAV: {0} (only 16-bit PCM mono is accepted)")]
    Unsupported(String),
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav_mono16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<(), WavError> {
    let data_len = (samples.len() * 2) as u32;
    let mut buf = Vec::with_capacity(44 + samples.len() * 2);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // PCM
    buf.extend_from_slice(&1u16.to_le_bytes()); // mono
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes()); // block align
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a mono 16-bit PCM WAV file, returning samples and sample rate.
pub fn read_wav_mono16(path: &Path) -> Result<(Vec<i16>, u32), WavError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(WavError::Truncated("chunk body"));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Truncated("fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or(WavError::Truncated("missing fmt chunk"))?;
    if format != 1 {
        return Err(WavError::Unsupported(format!("audio format {format}")));
    }
    if channels != 1 {
        return Err(WavError::Unsupported(format!("{channels} channels")));
    }
    if bits != 16 {
        return Err(WavError::Unsupported(format!("{bits}-bit samples")));
    }
    let data = data.ok_or(WavError::Truncated("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok((samples, rate))
}

/// Quantizes a float sample in roughly [-1, 1] to i16 with clamping.
pub fn quantize_i16(x: f64) -> i16 {
    let scaled = (x * 32768.0).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Inverse of [`quantize_i16`] up to rounding.
pub fn dequantize_i16(s: i16) -> f64 {
    s as f64 / 32768.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<i16> = (0..1000).map(|n| ((n * 1103) % 65536 - 32768) as i16).collect();
        write_wav_mono16(&path, &samples, 16_000).unwrap();
        let first = fs::read(&path).unwrap();
        let (read, rate) = read_wav_mono16(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(read, samples);
        let path2 = dir.path().join("b.wav");
        write_wav_mono16(&path2, &read, rate).unwrap();
        assert_eq!(first, fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_stereo_and_wrong_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        // Hand-build a stereo header.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"RIFF");
        buf.extend_from_slice(&36u32.to_le_bytes());
        buf.extend_from_slice(b"WAVE");
        buf.extend_from_slice(b"fmt ");
        buf.extend_from_slice(&16u32.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&2u16.to_le_bytes()); // stereo
        buf.extend_from_slice(&16_000u32.to_le_bytes());
        buf.extend_from_slice(&64_000u32.to_le_bytes());
        buf.extend_from_slice(&4u16.to_le_bytes());
        buf.extend_from_slice(&16u16.to_le_bytes());
        buf.extend_from_slice(b"data");
        buf.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, &buf).unwrap();
        assert!(matches!(read_wav_mono16(&path), Err(WavError::Unsupported(_))));

        buf[34] = 24; // bits per sample, mono again
        buf[22] = 1;
        fs::write(&path, &buf).unwrap();
        assert!(matches!(read_wav_mono16(&path), Err(WavError::Unsupported(_))));
    }

    #[test]
    fn rejects_non_wave_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.wav");
        fs::write(&path, b"definitely not audio").unwrap();
        assert!(matches!(read_wav_mono16(&path), Err(WavError::NotWave)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn arbitrary_samples_round_trip(samples in proptest::collection::vec(any::<i16>(), 0..500)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.wav");
            write_wav_mono16(&path, &samples, 16_000).unwrap();
            let (read, _) = read_wav_mono16(&path).unwrap();
            prop_assert_eq!(read, samples);
        }
    }

    #[test]
    fn quantization_is_clamped_and_invertible_at_centers() {
        assert_eq!(quantize_i16(2.0), i16::MAX);
        assert_eq!(quantize_i16(-2.0), i16::MIN);
        for s in [-32768i16, -1, 0, 1, 12345, 32767] {
            assert_eq!(quantize_i16(dequantize_i16(s)), s);
        }
    }
}
