//! A toy trainable framewise acoustic model plus a synthetic data
//! generator, for exercising the training objective and decode pipeline
//! end to end at desk scale.
//!
//! The model is a per-frame classifier: one tanh hidden layer over a
//! +-k-frame context window with hand-written backprop, trained by plain
//! mini-batch gradient descent on the combined CTC + cross-entropy
//! objective. Synthetic features are class-conditional Gaussians, which
//! gives a controllable separability dial and unambiguous ground truth.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::align::{AlignedSegment, AlignmentResult, AlignmentSource};
use crate::codec::{CodecError, Lexicon, LyricsSequence, SyllableId};
use crate::loss::{
    combined_alignment_loss, framewise_targets_from_alignment, log_softmax, LogitSequence,
    LossError,
};
use crate::posteriogram::{Posteriogram, PosteriogramError};
use crate::{scalar, Scalar};

pub const FEAT_MAGIC: [u8; 4] = *b"FEAT";
pub const TOYM_MAGIC: [u8; 4] = *b"TOYM";
pub const TOYM_VERSION: u16 = 1;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported TOYM version {found}, expected {TOYM_VERSION}")]
    BadVersion { found: u16 },
    #[error("truncated file: expected {expected} more bytes, got {found}")]
    Truncated { expected: usize, found: usize },
    #[error("feature dimension mismatch: model expects {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite loss at epoch {epoch}, item {item}; try a smaller learning rate")]
    NonFiniteLoss { epoch: usize, item: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Posteriogram(#[from] PosteriogramError),
}

/// Per-frame acoustic feature matrix (`T x F`) with its frame hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<F: Scalar> {
    pub frames: Array2<F>,
    pub frame_hop: f64,
}

impl<F: Scalar> FeatureSequence<F> {
    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Intermediates kept from a forward pass for backprop:
/// (context inputs, hidden activations, logits).
type ForwardCache<F> = (Array2<F>, Array2<F>, Array2<F>);

/// Per-frame classifier with one tanh hidden layer over a +-`context`
/// frame window; the window is edge-clamped at sequence boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<F: Scalar> {
    feature_dim: usize,
    context: usize,
    hidden: usize,
    class_count: usize,
    w1: Array2<F>,
    b1: Array1<F>,
    w2: Array2<F>,
    b2: Array1<F>,
}

/// Parameter gradients mirroring [`ToyModel`].
#[derive(Debug, Clone)]
pub struct ModelGradients<F: Scalar> {
    w1: Array2<F>,
    b1: Array1<F>,
    w2: Array2<F>,
    b2: Array1<F>,
}

impl<F: Scalar> ModelGradients<F> {
    fn zeros(model: &ToyModel<F>) -> Self {
        Self {
            w1: Array2::zeros(model.w1.dim()),
            b1: Array1::zeros(model.b1.dim()),
            w2: Array2::zeros(model.w2.dim()),
            b2: Array1::zeros(model.b2.dim()),
        }
    }

    fn accumulate(&mut self, other: &Self) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }
}

impl<F: Scalar> ToyModel<F> {
    fn input_dim(&self) -> usize {
        self.feature_dim * (2 * self.context + 1)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Zero-initialized model: all-zero logits, uniform posteriogram.
    pub fn zeros(feature_dim: usize, context: usize, hidden: usize, class_count: usize) -> Self {
        let input_dim = feature_dim * (2 * context + 1);
        Self {
            feature_dim,
            context,
            hidden,
            class_count,
            w1: Array2::zeros((hidden, input_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((class_count, hidden)),
            b2: Array1::zeros(class_count),
        }
    }

    /// Seeded uniform Xavier-style initialization.
    pub fn random(
        feature_dim: usize,
        context: usize,
        hidden: usize,
        class_count: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = feature_dim * (2 * context + 1);
        let mut uniform = |fan_in: usize, fan_out: usize, shape: (usize, usize)| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_fn(shape, |_| scalar::<F>(rng.gen_range(-a..a)))
        };
        let w1 = uniform(input_dim, hidden, (hidden, input_dim));
        let w2 = uniform(hidden, class_count, (class_count, hidden));
        Self {
            feature_dim,
            context,
            hidden,
            class_count,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(class_count),
        }
    }

    /// Stacks the edge-clamped context window of every frame: `T x D_in`.
    fn context_matrix(&self, x: &FeatureSequence<F>) -> Array2<F> {
        let t_count = x.frame_count();
        let k = self.context as isize;
        let f_dim = self.feature_dim;
        Array2::from_shape_fn((t_count, self.input_dim()), |(t, j)| {
            let window = j / f_dim;
            let dim = j % f_dim;
            let src = (t as isize + window as isize - k).clamp(0, t_count as isize - 1);
            x.frames[(src as usize, dim)]
        })
    }

    fn forward_cached(&self, x: &FeatureSequence<F>) -> Result<ForwardCache<F>, ModelError> {
        if x.feature_dim() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                found: x.feature_dim(),
            });
        }
        let inputs = self.context_matrix(x);
        let mut hidden = inputs.dot(&self.w1.t());
        for mut row in hidden.rows_mut() {
            row += &self.b1;
        }
        hidden.mapv_inplace(|v| v.tanh());
        let mut logits = hidden.dot(&self.w2.t());
        for mut row in logits.rows_mut() {
            row += &self.b2;
        }
        Ok((inputs, hidden, logits))
    }

    /// Deterministic `T x C` logits for a feature sequence.
    pub fn forward(&self, x: &FeatureSequence<F>) -> Result<LogitSequence<F>, ModelError> {
        let (_, _, logits) = self.forward_cached(x)?;
        Ok(LogitSequence::new(logits)?)
    }

    /// Backpropagates a loss gradient w.r.t. the logits into parameter
    /// gradients. `inputs` and `hidden` come from the cached forward pass.
    fn backward(
        &self,
        inputs: &Array2<F>,
        hidden: &Array2<F>,
        grad_logits: &Array2<F>,
    ) -> ModelGradients<F> {
        let grad_b2 = grad_logits.sum_axis(Axis(0));
        let grad_w2 = grad_logits.t().dot(hidden);
        let d_hidden = grad_logits.dot(&self.w2);
        let d_pre = &d_hidden * &hidden.mapv(|h| F::one() - h * h);
        let grad_b1 = d_pre.sum_axis(Axis(0));
        let grad_w1 = d_pre.t().dot(inputs);
        ModelGradients {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        }
    }

    fn apply(&mut self, grads: &ModelGradients<F>, step: F) {
        self.w1 = &self.w1 - &grads.w1.mapv(|g| g * step);
        self.b1 = &self.b1 - &grads.b1.mapv(|g| g * step);
        self.w2 = &self.w2 - &grads.w2.mapv(|g| g * step);
        self.b2 = &self.b2 - &grads.b2.mapv(|g| g * step);
    }

    /// Softmax of the forward logits; rows sum to 1 within 1e-6 and the
    /// frame hop is copied from the input.
    pub fn predict_posteriogram(&self, x: &FeatureSequence<F>) -> Result<Posteriogram<F>, ModelError> {
        let logits = self.forward(x)?;
        let probs = log_softmax(logits.logits()).mapv(|v| v.exp());
        Ok(Posteriogram::new(probs, x.frame_hop)?)
    }

    fn parameters(&self) -> impl Iterator<Item = F> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    /// Saves the versioned TOYM checkpoint (dims, then f32 parameters).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let mut out = Vec::new();
        out.extend_from_slice(&TOYM_MAGIC);
        out.extend_from_slice(&TOYM_VERSION.to_le_bytes());
        for dim in [self.feature_dim, self.context, self.hidden, self.class_count] {
            out.extend_from_slice(&(dim as u16).to_le_bytes());
        }
        for p in self.parameters() {
            out.extend_from_slice(&p.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        crate::fsutil::write_atomic(path, &out).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Loads a TOYM checkpoint.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut r = bytes.as_slice();
        let magic = read_array::<4>(&mut r)?;
        if magic != TOYM_MAGIC {
            return Err(ModelError::BadMagic {
                found: magic,
                expected: TOYM_MAGIC,
            });
        }
        let version = u16::from_le_bytes(read_array::<2>(&mut r)?);
        if version != TOYM_VERSION {
            return Err(ModelError::BadVersion { found: version });
        }
        let feature_dim = u16::from_le_bytes(read_array::<2>(&mut r)?) as usize;
        let context = u16::from_le_bytes(read_array::<2>(&mut r)?) as usize;
        let hidden = u16::from_le_bytes(read_array::<2>(&mut r)?) as usize;
        let class_count = u16::from_le_bytes(read_array::<2>(&mut r)?) as usize;
        let input_dim = feature_dim * (2 * context + 1);
        let param_count = hidden * input_dim + hidden + class_count * hidden + class_count;
        if r.len() != param_count * 4 {
            return Err(ModelError::Truncated {
                expected: param_count * 4,
                found: r.len(),
            });
        }
        let mut values = r
            .chunks_exact(4)
            .map(|c| F::from(f32::from_le_bytes(c.try_into().unwrap())).unwrap());
        let mut take = |n: usize| -> Vec<F> { values.by_ref().take(n).collect() };
        let w1 = Array2::from_shape_vec((hidden, input_dim), take(hidden * input_dim)).unwrap();
        let b1 = Array1::from_vec(take(hidden));
        let w2 = Array2::from_shape_vec((class_count, hidden), take(class_count * hidden)).unwrap();
        let b2 = Array1::from_vec(take(class_count));
        Ok(Self {
            feature_dim,
            context,
            hidden,
            class_count,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], ModelError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| ModelError::Truncated {
        expected: N,
        found: r.len(),
    })?;
    Ok(buf)
}

/// Writes a FEAT file: magic, `T` u32, `F` u16, frame_hop f64, then f32
/// features row-major, all little-endian.
pub fn write_features<F: Scalar>(
    x: &FeatureSequence<F>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(18 + 4 * x.frames.len());
    out.extend_from_slice(&FEAT_MAGIC);
    out.extend_from_slice(&(x.frame_count() as u32).to_le_bytes());
    out.extend_from_slice(&(x.feature_dim() as u16).to_le_bytes());
    out.extend_from_slice(&x.frame_hop.to_le_bytes());
    for &v in x.frames.iter() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    crate::fsutil::write_atomic(path, &out).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a FEAT file written by [`write_features`].
pub fn read_features<F: Scalar>(path: impl AsRef<Path>) -> Result<FeatureSequence<F>, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = bytes.as_slice();
    let magic = read_array::<4>(&mut r)?;
    if magic != FEAT_MAGIC {
        return Err(ModelError::BadMagic {
            found: magic,
            expected: FEAT_MAGIC,
        });
    }
    let t_count = u32::from_le_bytes(read_array::<4>(&mut r)?) as usize;
    let f_dim = u16::from_le_bytes(read_array::<2>(&mut r)?) as usize;
    let frame_hop = f64::from_le_bytes(read_array::<8>(&mut r)?);
    let expected = t_count * f_dim * 4;
    if r.len() != expected {
        return Err(ModelError::Truncated {
            expected,
            found: r.len(),
        });
    }
    let data: Vec<F> = r
        .chunks_exact(4)
        .map(|c| F::from(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
        .collect();
    Ok(FeatureSequence {
        frames: Array2::from_shape_vec((t_count, f_dim), data).unwrap(),
        frame_hop,
    })
}

/// Synthetic dataset recipe: class-conditional Gaussian features around
/// per-class mean vectors separated by `separation`, with silence
/// segments (zero mean) interleaved between syllable segments.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Number of syllable classes (silence and blank excluded).
    pub class_count: usize,
    pub feature_dim: usize,
    /// Distance scale between class means; must be positive.
    pub separation: f64,
    pub noise_std: f64,
    /// Inclusive range of sequence lengths, in frames.
    pub frames_range: (usize, usize),
    /// Inclusive range of segment lengths, in frames.
    pub segment_range: (usize, usize),
    pub frame_hop: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 3,
            feature_dim: 8,
            separation: 5.0,
            noise_std: 1.0,
            frames_range: (80, 120),
            segment_range: (4, 12),
            frame_hop: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.class_count == 0 || self.feature_dim == 0 {
            return Err(ModelError::InvalidSpec(
                "class_count and feature_dim must be positive".into(),
            ));
        }
        if !self.separation.is_finite() || self.separation <= 0.0 {
            return Err(ModelError::InvalidSpec(format!(
                "separation must be positive (got {}); classes are indistinguishable otherwise",
                self.separation
            )));
        }
        if self.noise_std < 0.0 {
            return Err(ModelError::InvalidSpec("noise_std must be >= 0".into()));
        }
        if self.frames_range.0 == 0 || self.frames_range.0 > self.frames_range.1 {
            return Err(ModelError::InvalidSpec(format!(
                "bad frames range {:?}",
                self.frames_range
            )));
        }
        if self.segment_range.0 == 0 || self.segment_range.0 > self.segment_range.1 {
            return Err(ModelError::InvalidSpec(format!(
                "bad segment range {:?}",
                self.segment_range
            )));
        }
        if !self.frame_hop.is_finite() || self.frame_hop <= 0.0 {
            return Err(ModelError::InvalidSpec("frame_hop must be positive".into()));
        }
        Ok(())
    }

    /// Synthetic character for a syllable class (drawn from the CJK
    /// unified block so the lyrics look like real character sequences).
    pub fn character_for_class(&self, class: usize) -> char {
        char::from_u32(0x4E00 + class as u32).expect("CJK block covers the class range")
    }

    /// Lexicon over the synthetic characters: class `i` maps to
    /// syllable `s<i>`.
    pub fn lexicon(&self) -> Lexicon {
        Lexicon::from_pairs(
            (0..self.class_count).map(|i| (self.character_for_class(i), format!("s{i}"))),
        )
        .expect("generated pairs are conflict-free")
    }

    /// Mean feature vector for a syllable class; silence uses the origin.
    /// Each class sits on a distinct axis (scaled when classes outnumber
    /// feature dimensions), so pairwise distances are at least
    /// `separation`.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.feature_dim];
        let slot = class + 1;
        let dim = slot % self.feature_dim;
        let level = 1 + slot / self.feature_dim;
        mean[dim] = self.separation * level as f64;
        mean
    }
}

/// One synthesized training example: features, the syllable "lyrics",
/// and the ground-truth character alignment.
#[derive(Debug, Clone)]
pub struct SynthItem<F: Scalar> {
    pub features: FeatureSequence<F>,
    pub lyrics: LyricsSequence,
    pub reference: AlignmentResult,
}

/// Generates `n` items, deterministically per `spec.seed`.
pub fn synth_dataset<F: Scalar>(spec: &SynthSpec, n: usize) -> Result<Vec<SynthItem<F>>, ModelError> {
    spec.validate()?;
    if n == 0 {
        return Err(ModelError::InvalidSpec("need at least one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .expect("validated noise_std is finite");
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        items.push(synth_item(spec, &mut rng, &noise)?);
    }
    Ok(items)
}

fn synth_item<F: Scalar>(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> Result<SynthItem<F>, ModelError> {
    let total = rng.gen_range(spec.frames_range.0..=spec.frames_range.1);
    let (seg_min, seg_max) = spec.segment_range;

    // Layout: optional leading silence, then syllable segments with
    // optional silences in between. `None` marks silence.
    let mut layout: Vec<(Option<usize>, usize)> = Vec::new();
    let mut remaining = total;
    if remaining > 1 && rng.gen_bool(0.7) {
        let len = rng.gen_range(seg_min..=seg_max).min(remaining - 1);
        if len > 0 {
            layout.push((None, len));
            remaining -= len;
        }
    }
    while remaining > 0 {
        let len = rng.gen_range(seg_min..=seg_max).min(remaining);
        layout.push((Some(rng.gen_range(0..spec.class_count)), len));
        remaining -= len;
        if remaining > 0 && rng.gen_bool(0.6) {
            let len = rng.gen_range(seg_min..=seg_max).min(remaining);
            layout.push((None, len));
            remaining -= len;
        }
    }

    let mut frames = Array2::zeros((total, spec.feature_dim));
    let mut segments = Vec::new();
    let mut chars = Vec::new();
    let mut cursor = 0usize;
    for &(class, len) in &layout {
        let mean = match class {
            Some(c) => spec.class_mean(c),
            None => vec![0.0; spec.feature_dim],
        };
        for t in cursor..cursor + len {
            for (d, &m) in mean.iter().enumerate() {
                let sample = if spec.noise_std > 0.0 {
                    m + noise.sample(rng)
                } else {
                    m
                };
                frames[(t, d)] = scalar::<F>(sample);
            }
        }
        if let Some(c) = class {
            let character = spec.character_for_class(c);
            chars.push(character);
            segments.push(AlignedSegment {
                character,
                syllable: format!("s{c}"),
                onset: cursor as f64 * spec.frame_hop,
                offset: (cursor + len) as f64 * spec.frame_hop,
            });
        }
        cursor += len;
    }

    let reference = AlignmentResult {
        frame_hop: spec.frame_hop,
        source: AlignmentSource::Reference,
        segments,
    };
    reference.validate().expect("generated segments are ordered");
    Ok(SynthItem {
        features: FeatureSequence {
            frames,
            frame_hop: spec.frame_hop,
        },
        lyrics: LyricsSequence::new(chars),
        reference,
    })
}

/// Training hyperparameters for [`train`].
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 8,
        }
    }
}

/// Mini-batch gradient descent on the combined alignment loss.
///
/// Items are visited in a fixed order each epoch, so a zero learning rate
/// leaves the parameters untouched and the loss curve exactly flat.
/// Returns the trained model and the per-epoch mean loss.
pub fn train<F: Scalar>(
    mut model: ToyModel<F>,
    data: &[SynthItem<F>],
    lex: &Lexicon,
    config: &TrainConfig,
) -> Result<(ToyModel<F>, Vec<f64>), ModelError> {
    let batch_size = config.batch_size.max(1);
    let blank = lex.blank_id();
    let labels_and_targets: Vec<(Vec<SyllableId>, _)> = data
        .iter()
        .map(|item| {
            let labels = lex.chars_to_syllables(&item.lyrics)?;
            let targets = framewise_targets_from_alignment(
                &item.reference,
                item.features.frame_count(),
                item.features.frame_hop,
                lex,
            )?;
            Ok((labels, targets))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0f64;
        for (batch_start, batch) in data.chunks(batch_size).enumerate() {
            let mut grads = ModelGradients::zeros(&model);
            for (offset, item) in batch.iter().enumerate() {
                let index = batch_start * batch_size + offset;
                let (labels, targets) = &labels_and_targets[index];
                let (inputs, hidden, logits) = model.forward_cached(&item.features)?;
                let logits = LogitSequence::new(logits)?;
                let (loss, grad_logits) =
                    combined_alignment_loss(&logits, labels, targets, blank)?;
                let loss = loss.to_f64().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, item: index });
                }
                epoch_loss += loss;
                grads.accumulate(&model.backward(&inputs, &hidden, &grad_logits));
            }
            let step = scalar::<F>(config.learning_rate / batch.len() as f64);
            model.apply(&grads, step);
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((model, curve))
}
