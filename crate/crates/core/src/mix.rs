//! SNR-controlled mixing of vocal and accompaniment tracks.
//!
//! The accompaniment is scaled so that `10 * log10(P_vocal / P_accomp)`
//! equals the requested SNR, where power is the full-clip mean square.
//! The vocal timeline is always preserved: the accompaniment is cropped
//! at a seeded offset and looped when short, so alignment labels indexed
//! against the vocal stay valid.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::wav::{read_wav, write_wav, WavError};
use crate::{scalar, Scalar};

#[derive(Error, Debug)]
pub enum MixError {
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("{side} clip is silent; its SNR is undefined")]
    SilentClip { side: &'static str },
    #[error("accompaniment segment at offset {offset} is silent; its SNR is undefined")]
    SilentSegment { offset: usize },
    #[error("sample rates differ: vocal {vocal} Hz vs accompaniment {accomp} Hz")]
    SampleRateMismatch { vocal: u32, accomp: u32 },
    #[error("SNR must be finite, got {0}")]
    NonFiniteSnr(f64),
    #[error("no .wav files found in {path}")]
    EmptyDir { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

/// Mono PCM samples in `[-1, 1]` plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<F: Scalar> {
    samples: Vec<F>,
    sample_rate: u32,
}

impl<F: Scalar> AudioClip<F> {
    pub fn new(samples: Vec<F>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[F] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// What to do when a mix exceeds full scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipPolicy {
    /// Rescale the whole mix by its peak, preserving the internal SNR.
    #[default]
    Normalize,
    /// Saturate samples at `[-1, 1]`.
    HardClip,
}

/// Mixing request: SNR of the vocal relative to the accompaniment in dB,
/// a seed for the accompaniment segment offset, and the clip policy.
#[derive(Debug, Clone, Copy)]
pub struct MixSpec {
    pub snr_db: f64,
    pub seed: u64,
    pub clip_policy: ClipPolicy,
}

/// Mean of squared samples (the power used for SNR).
pub fn rms_power<F: Scalar>(clip: &AudioClip<F>) -> Result<F, MixError> {
    if clip.is_empty() {
        return Err(MixError::EmptyClip);
    }
    let sum = clip
        .samples
        .iter()
        .fold(F::zero(), |acc, &s| acc + s * s);
    Ok(sum / scalar::<F>(clip.len() as f64))
}

/// A completed mix plus the parameters that produced it, so callers can
/// re-derive the scaled components.
#[derive(Debug, Clone)]
pub struct MixOutput<F: Scalar> {
    pub clip: AudioClip<F>,
    /// Gain applied to the accompaniment segment.
    pub gain: F,
    /// Segment start within the accompaniment, in samples.
    pub offset_samples: usize,
    /// Rescale factor applied by [`ClipPolicy::Normalize`] (1 when the
    /// mix never exceeded full scale).
    pub normalize_scale: F,
}

/// Mixes with an explicit accompaniment offset; fully deterministic.
pub fn mix_at_offset<F: Scalar>(
    vocal: &AudioClip<F>,
    accomp: &AudioClip<F>,
    snr_db: f64,
    offset: usize,
    clip_policy: ClipPolicy,
) -> Result<MixOutput<F>, MixError> {
    if !snr_db.is_finite() {
        return Err(MixError::NonFiniteSnr(snr_db));
    }
    if vocal.sample_rate != accomp.sample_rate {
        return Err(MixError::SampleRateMismatch {
            vocal: vocal.sample_rate,
            accomp: accomp.sample_rate,
        });
    }
    if vocal.is_empty() || accomp.is_empty() {
        return Err(MixError::EmptyClip);
    }
    let p_vocal = rms_power(vocal)?;
    if p_vocal == F::zero() {
        return Err(MixError::SilentClip { side: "vocal" });
    }
    if rms_power(accomp)? == F::zero() {
        return Err(MixError::SilentClip {
            side: "accompaniment",
        });
    }

    // Crop at the offset, looping when the accompaniment is short.
    let offset = offset % accomp.len();
    let segment: Vec<F> = (0..vocal.len())
        .map(|i| accomp.samples[(offset + i) % accomp.len()])
        .collect();
    let p_segment = segment.iter().fold(F::zero(), |acc, &s| acc + s * s)
        / scalar::<F>(segment.len() as f64);
    if p_segment == F::zero() {
        return Err(MixError::SilentSegment { offset });
    }

    let snr_linear = scalar::<F>(10f64.powf(snr_db / 10.0));
    let gain = (p_vocal / (p_segment * snr_linear)).sqrt();

    let mut mix: Vec<F> = vocal
        .samples
        .iter()
        .zip(&segment)
        .map(|(&v, &a)| v + gain * a)
        .collect();
    let peak = mix.iter().fold(F::zero(), |acc, &s| acc.max(s.abs()));
    let mut normalize_scale = F::one();
    if peak > F::one() {
        match clip_policy {
            ClipPolicy::Normalize => {
                normalize_scale = F::one() / peak;
                for s in &mut mix {
                    *s *= normalize_scale;
                }
            }
            ClipPolicy::HardClip => {
                for s in &mut mix {
                    *s = s.min(F::one()).max(-F::one());
                }
            }
        }
    }
    Ok(MixOutput {
        clip: AudioClip::new(mix, vocal.sample_rate),
        gain,
        offset_samples: offset,
        normalize_scale,
    })
}

/// Mixes vocal and accompaniment at the requested SNR, drawing the
/// accompaniment offset from the spec's seed.
pub fn mix_at_snr<F: Scalar>(
    vocal: &AudioClip<F>,
    accomp: &AudioClip<F>,
    spec: &MixSpec,
) -> Result<AudioClip<F>, MixError> {
    if accomp.is_empty() {
        return Err(MixError::EmptyClip);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = rng.gen_range(0..accomp.len());
    Ok(mix_at_offset(vocal, accomp, spec.snr_db, offset, spec.clip_policy)?.clip)
}

/// One augmentation outcome; failed inputs carry the error text instead
/// of an output path.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub vocal: String,
    pub accompaniment: String,
    pub offset_samples: usize,
    pub snr_db: f64,
    /// Output path, or `ERROR: <message>` when this input failed.
    pub output: String,
}

impl ManifestRow {
    pub fn is_error(&self) -> bool {
        self.output.starts_with("ERROR:")
    }
}

/// Augmentation manifest: one row per vocal x SNR, sorted by vocal name
/// and then SNR regardless of processing order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_error()).count()
    }

    /// Writes the manifest atomically as CSV with the header
    /// `vocal,accompaniment,offset_samples,snr_db,output`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MixError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["vocal", "accompaniment", "offset_samples", "snr_db", "output"])?;
        for row in &self.rows {
            writer.write_record([
                row.vocal.as_str(),
                row.accompaniment.as_str(),
                &row.offset_samples.to_string(),
                &row.snr_db.to_string(),
                &row.output,
            ])?;
        }
        let bytes = writer
            .into_inner()
            .expect("in-memory CSV writer cannot fail to flush");
        crate::fsutil::write_atomic(path.as_ref(), &bytes).map_err(|source| MixError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, MixError> {
    let entries = fs::read_dir(dir).map_err(|source| MixError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(MixError::EmptyDir {
            path: dir.display().to_string(),
        });
    }
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Mixes every vocal in `vocal_dir` with a seeded-random accompaniment
/// from `accomp_dir` at every requested SNR, writing WAVs and
/// `manifest.csv` into `out_dir`.
///
/// Deterministic per seed: pairings and offsets are drawn in sorted vocal
/// order, so identical inputs and seed produce byte-identical outputs.
/// Unreadable or silent inputs become error rows; the run continues.
pub fn augment_dataset<F: Scalar>(
    vocal_dir: impl AsRef<Path>,
    accomp_dir: impl AsRef<Path>,
    snrs: &[f64],
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, MixError> {
    let vocals = wav_files(vocal_dir.as_ref())?;
    let accomps = wav_files(accomp_dir.as_ref())?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| MixError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(vocals.len() * snrs.len());
    for vocal_path in &vocals {
        let vocal: Result<AudioClip<F>, MixError> =
            read_wav(vocal_path).map_err(MixError::from);
        for &snr_db in snrs {
            // Draws happen unconditionally so one bad file does not shift
            // the randomness of the rest of the run.
            let accomp_idx = rng.gen_range(0..accomps.len());
            let raw_offset = rng.gen::<u64>();
            let accomp_path = &accomps[accomp_idx];
            let row = match &vocal {
                Err(err) => ManifestRow {
                    vocal: file_name(vocal_path),
                    accompaniment: file_name(accomp_path),
                    offset_samples: 0,
                    snr_db,
                    output: format!("ERROR: {err}"),
                },
                Ok(vocal_clip) => {
                    match mix_one::<F>(vocal_clip, accomp_path, snr_db, raw_offset, out_dir, vocal_path) {
                        Ok((offset, output)) => ManifestRow {
                            vocal: file_name(vocal_path),
                            accompaniment: file_name(accomp_path),
                            offset_samples: offset,
                            snr_db,
                            output,
                        },
                        Err(err) => ManifestRow {
                            vocal: file_name(vocal_path),
                            accompaniment: file_name(accomp_path),
                            offset_samples: 0,
                            snr_db,
                            output: format!("ERROR: {err}"),
                        },
                    }
                }
            };
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| {
        a.vocal
            .cmp(&b.vocal)
            .then(a.snr_db.partial_cmp(&b.snr_db).expect("finite SNR"))
    });
    let manifest = Manifest { rows };
    manifest.write_csv(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

fn mix_one<F: Scalar>(
    vocal: &AudioClip<F>,
    accomp_path: &Path,
    snr_db: f64,
    raw_offset: u64,
    out_dir: &Path,
    vocal_path: &Path,
) -> Result<(usize, String), MixError> {
    let accomp: AudioClip<F> = read_wav(accomp_path)?;
    if accomp.is_empty() {
        return Err(MixError::EmptyClip);
    }
    let offset = (raw_offset % accomp.len() as u64) as usize;
    let output = mix_at_offset(vocal, &accomp, snr_db, offset, ClipPolicy::Normalize)?;
    let stem = vocal_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "vocal".into());
    let out_path = out_dir.join(format!("{stem}_snr{snr_db}.wav"));
    write_wav(&output.clip, &out_path)?;
    Ok((offset, file_name(&out_path)))
}
