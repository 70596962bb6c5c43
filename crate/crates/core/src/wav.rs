//! 16-bit PCM mono WAV reading and writing for the mixing pipeline.
//!
//! Samples are exchanged as floats in `[-1, 1]`; writing quantizes with
//! round-half-away-from-zero so outputs are byte-deterministic.

use std::path::Path;

use thiserror::Error;

use crate::mix::AudioClip;
use crate::Scalar;

#[derive(Error, Debug)]
pub enum WavError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: hound::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: hound::Error,
    },
    #[error("{path}: expected mono, got {channels} channels")]
    NotMono { path: String, channels: u16 },
    #[error("{path}: expected 16-bit integer PCM, got {bits}-bit {format:?}")]
    NotPcm16 {
        path: String,
        bits: u16,
        format: hound::SampleFormat,
    },
    #[error("cannot write an empty clip to {path}")]
    Empty { path: String },
}

/// Reads a 16-bit PCM mono WAV into a clip with samples in `[-1, 1]`.
pub fn read_wav<F: Scalar>(path: impl AsRef<Path>) -> Result<AudioClip<F>, WavError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|source| WavError::Read {
        path: display.clone(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(WavError::NotMono {
            path: display,
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(WavError::NotPcm16 {
            path: display,
            bits: spec.bits_per_sample,
            format: spec.sample_format,
        });
    }
    let scale = F::from(1.0 / 32768.0).unwrap();
    let samples = reader
        .samples::<i16>()
        .map(|s| {
            s.map(|v| F::from(v).unwrap() * scale)
                .map_err(|source| WavError::Read {
                    path: display.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<F>, WavError>>()?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a clip as 16-bit PCM mono, atomically. Samples are clamped to
/// `[-1, 1]` before quantization.
pub fn write_wav<F: Scalar>(clip: &AudioClip<F>, path: impl AsRef<Path>) -> Result<(), WavError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    if clip.is_empty() {
        return Err(WavError::Empty { path: display });
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write_err = |source| WavError::Write {
        path: display.clone(),
        source,
    };
    let tmp = crate::fsutil::temp_sibling(path);
    let mut writer = hound::WavWriter::create(&tmp, spec).map_err(write_err)?;
    for &sample in clip.samples() {
        let v = sample.to_f64().unwrap_or(0.0).clamp(-1.0, 1.0);
        let q = ((v * 32768.0).round() as i32).clamp(-32768, 32767) as i16;
        if let Err(source) = writer.write_sample(q) {
            let _ = std::fs::remove_file(&tmp);
            return Err(write_err(source));
        }
    }
    if let Err(source) = writer.finalize() {
        let _ = std::fs::remove_file(&tmp);
        return Err(write_err(source));
    }
    std::fs::rename(&tmp, path).map_err(|source| {
        let _ = std::fs::remove_file(&tmp);
        WavError::Write {
            path: path.display().to_string(),
            source: hound::Error::IoError(source),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..100)
            .map(|i| (i as f64 * 0.21).sin() * 0.8)
            .collect();
        let clip = AudioClip::new(samples, 8000);
        write_wav(&clip, &path).unwrap();
        let back: AudioClip<f64> = read_wav(&path).unwrap();
        assert_eq!(back.len(), clip.len());
        assert_eq!(back.sample_rate(), 8000);
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn same_clip_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        let clip = AudioClip::new(vec![0.1f64, -0.2, 0.3, 1.5, -1.5], 16000);
        write_wav(&clip, &p1).unwrap();
        write_wav(&clip, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
