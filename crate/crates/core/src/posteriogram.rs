//! Framewise class-probability matrices and their on-disk format.
//!
//! A posteriogram is the aligner's sole acoustic input: `T x C`
//! probabilities (one distribution per frame) plus the frame hop in
//! seconds. The PSTG file layout is little-endian:
//!
//! ```text
//! magic "PSTG" | version u16 = 1 | class_count u16 | frame_count u32
//! | frame_hop f64 | frame_count * class_count f32, frame-major
//! ```
//!
//! Probabilities are stored, not log-probabilities; consumers take logs
//! themselves so the format stays model-agnostic.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::{scalar, Scalar};

pub const PSTG_MAGIC: [u8; 4] = *b"PSTG";
pub const PSTG_VERSION: u16 = 1;

/// Row sums may deviate from 1 by at most this much.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Error, Debug)]
pub enum PosteriogramError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic {found:?}, expected \"PSTG\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported PSTG version {found}, expected {PSTG_VERSION}")]
    BadVersion { found: u16 },
    #[error("truncated payload: expected {expected} bytes of probabilities, got {found}")]
    Truncated { expected: usize, found: usize },
    #[error("frame count must be >= 1")]
    NoFrames,
    #[error("class count {found} is below the minimum of 3 (>=1 syllable + silence + blank)")]
    TooFewClasses { found: usize },
    #[error("class count {found} exceeds the format limit of {max}")]
    ClassCountOverflow { found: usize, max: usize },
    #[error("frame count {found} exceeds the format limit of {max}")]
    FrameCountOverflow { found: usize, max: usize },
    #[error("frame_hop must be positive and finite, got {found}")]
    BadFrameHop { found: f64 },
    #[error("probability at frame {frame}, class {class} is {value} (outside [0, 1] or non-finite)")]
    BadProbability {
        frame: usize,
        class: usize,
        value: f64,
    },
    #[error("row sums must be 1 within {ROW_SUM_TOLERANCE}; worst row {frame} sums to {sum}")]
    RowSum { frame: usize, sum: f64 },
}

fn io_err(path: &Path, source: io::Error) -> PosteriogramError {
    PosteriogramError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-frame probability distributions over the class space.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriogram<F: Scalar> {
    probs: Array2<F>,
    frame_hop: f64,
}

impl<F: Scalar> Posteriogram<F> {
    /// Validates the type invariants: `T >= 1`, `C >= 3`, entries in
    /// `[0, 1]`, every row summing to 1 within [`ROW_SUM_TOLERANCE`].
    pub fn new(probs: Array2<F>, frame_hop: f64) -> Result<Self, PosteriogramError> {
        let p = Self::new_unchecked(probs, frame_hop);
        p.validate()?;
        Ok(p)
    }

    /// Skips probability validation. For tests that need unnormalized
    /// rows and for callers that construct rows already known valid.
    pub fn new_unchecked(probs: Array2<F>, frame_hop: f64) -> Self {
        Self { probs, frame_hop }
    }

    pub fn validate(&self) -> Result<(), PosteriogramError> {
        if self.frame_count() == 0 {
            return Err(PosteriogramError::NoFrames);
        }
        if self.class_count() < 3 {
            return Err(PosteriogramError::TooFewClasses {
                found: self.class_count(),
            });
        }
        if !(self.frame_hop.is_finite() && self.frame_hop > 0.0) {
            return Err(PosteriogramError::BadFrameHop {
                found: self.frame_hop,
            });
        }
        let mut worst: Option<(usize, f64)> = None;
        for (t, row) in self.probs.rows().into_iter().enumerate() {
            let mut sum = 0.0f64;
            for (c, &v) in row.iter().enumerate() {
                let v = v.to_f64().unwrap_or(f64::NAN);
                if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                    return Err(PosteriogramError::BadProbability {
                        frame: t,
                        class: c,
                        value: v,
                    });
                }
                sum += v;
            }
            let dev = (sum - 1.0).abs();
            if worst.is_none_or(|(_, w)| dev > (w - 1.0).abs()) {
                worst = Some((t, sum));
            }
        }
        if let Some((frame, sum)) = worst {
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(PosteriogramError::RowSum { frame, sum });
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.probs.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.probs.ncols()
    }

    /// Seconds per frame.
    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    /// Total covered duration, `T * frame_hop`, in seconds.
    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 * self.frame_hop
    }

    pub fn prob(&self, frame: usize, class: usize) -> F {
        self.probs[(frame, class)]
    }

    pub fn probs(&self) -> &Array2<F> {
        &self.probs
    }
}

/// Start time of a frame in seconds; the frame ends at
/// `frame_to_time(frame_index + 1, frame_hop)`.
pub fn frame_to_time(frame_index: usize, frame_hop: f64) -> f64 {
    frame_index as f64 * frame_hop
}

/// Reads a [`Posteriogram`] from a PSTG file, validating the invariants.
pub fn read_posteriogram<F: Scalar>(path: impl AsRef<Path>) -> Result<Posteriogram<F>, PosteriogramError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_posteriogram(&bytes)
}

/// Decodes PSTG bytes; see the module docs for the layout.
pub fn decode_posteriogram<F: Scalar>(bytes: &[u8]) -> Result<Posteriogram<F>, PosteriogramError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != PSTG_MAGIC {
        return Err(PosteriogramError::BadMagic { found: magic });
    }
    let version = read_u16(&mut r)?;
    if version != PSTG_VERSION {
        return Err(PosteriogramError::BadVersion { found: version });
    }
    let class_count = read_u16(&mut r)? as usize;
    let frame_count = read_u32(&mut r)? as usize;
    let frame_hop = f64::from_le_bytes(read_array::<8>(&mut r)?);
    let expected = frame_count
        .checked_mul(class_count)
        .and_then(|n| n.checked_mul(4))
        .ok_or(PosteriogramError::Truncated {
            expected: usize::MAX,
            found: r.len(),
        })?;
    if r.len() != expected {
        return Err(PosteriogramError::Truncated {
            expected,
            found: r.len(),
        });
    }
    let mut data = Vec::with_capacity(frame_count * class_count);
    for chunk in r.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        data.push(F::from(v).expect("f32 fits any scalar"));
    }
    let probs = Array2::from_shape_vec((frame_count, class_count), data)
        .expect("shape matches the decoded payload length");
    Posteriogram::new(probs, frame_hop)
}

/// Writes a PSTG file. The posteriogram is validated first so an invalid
/// matrix never reaches disk; output bytes are deterministic and land
/// atomically.
pub fn write_posteriogram<F: Scalar>(
    p: &Posteriogram<F>,
    path: impl AsRef<Path>,
) -> Result<(), PosteriogramError> {
    let path = path.as_ref();
    let bytes = encode_posteriogram(p)?;
    crate::fsutil::write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

/// Encodes a validated posteriogram into PSTG bytes.
pub fn encode_posteriogram<F: Scalar>(p: &Posteriogram<F>) -> Result<Vec<u8>, PosteriogramError> {
    p.validate()?;
    if p.class_count() > u16::MAX as usize {
        return Err(PosteriogramError::ClassCountOverflow {
            found: p.class_count(),
            max: u16::MAX as usize,
        });
    }
    if p.frame_count() > u32::MAX as usize {
        return Err(PosteriogramError::FrameCountOverflow {
            found: p.frame_count(),
            max: u32::MAX as usize,
        });
    }
    let mut out = Vec::with_capacity(20 + 4 * p.frame_count() * p.class_count());
    out.extend_from_slice(&PSTG_MAGIC);
    out.extend_from_slice(&PSTG_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.class_count() as u16).to_le_bytes());
    out.extend_from_slice(&(p.frame_count() as u32).to_le_bytes());
    out.extend_from_slice(&p.frame_hop.to_le_bytes());
    for &v in p.probs.iter() {
        let v32 = v.to_f32().expect("validated probability fits in f32");
        out.extend_from_slice(&v32.to_le_bytes());
    }
    Ok(out)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), PosteriogramError> {
    r.read_exact(buf).map_err(|_| PosteriogramError::Truncated {
        expected: buf.len(),
        found: r.len(),
    })
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], PosteriogramError> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut &[u8]) -> Result<u16, PosteriogramError> {
    Ok(u16::from_le_bytes(read_array::<2>(r)?))
}

fn read_u32(r: &mut &[u8]) -> Result<u32, PosteriogramError> {
    Ok(u32::from_le_bytes(read_array::<4>(r)?))
}

/// Row-normalizes arbitrary non-negative scores into a valid posteriogram.
/// Handy for building test fixtures from hand-written rows.
pub fn normalize_rows<F: Scalar>(mut scores: Array2<F>) -> Array2<F> {
    for mut row in scores.rows_mut() {
        let sum = row.iter().fold(F::zero(), |a, &b| a + b);
        if sum > F::zero() {
            row.mapv_inplace(|v| v / sum);
        } else {
            let uniform = F::one() / scalar::<F>(row.len() as f64);
            row.fill(uniform);
        }
    }
    scores
}
