//! Core library for character-level lyrics alignment built on framewise
//! syllable-class posteriograms.
//!
//! The pipeline: a lexicon maps characters to syllable classes
//! ([`codec`]), an acoustic model emits a per-frame probability
//! distribution over those classes ([`posteriogram`], [`model`]), Viterbi
//! forced alignment turns the posteriogram plus the lyrics into
//! per-character onset/offset times ([`align`]), and the training
//! objective combines CTC with framewise cross-entropy ([`loss`]).
//! [`mix`] provides SNR-controlled accompaniment augmentation and
//! [`metrics`] the evaluation suite (MAE, CER, PER, PCAS).

pub mod align;
pub mod codec;
pub mod demo;
pub mod fsutil;
pub mod loss;
pub mod metrics;
pub mod mix;
pub mod model;
pub mod posteriogram;
pub mod wav;

use std::fmt::{Debug, Display};

use ndarray::ScalarOperand;
use num_traits::{Float, NumAssignOps};

/// Scalar type for the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssignOps + ScalarOperand + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + NumAssignOps + ScalarOperand + Debug + Display + Send + Sync + 'static
{
}

/// Casts an `f64` constant into the active scalar type.
pub(crate) fn scalar<F: Scalar>(x: f64) -> F {
    F::from(x).expect("f64 constant must be representable in the scalar type")
}

pub use align::{AlignedSegment, AlignmentResult, AlignmentSource};
pub use codec::{Lexicon, LyricsSequence, SyllableId};

pub type Posteriogram32 = posteriogram::Posteriogram<f32>;
pub type Posteriogram64 = posteriogram::Posteriogram<f64>;
pub type LogitSequence32 = loss::LogitSequence<f32>;
pub type LogitSequence64 = loss::LogitSequence<f64>;
pub type FeatureSequence32 = model::FeatureSequence<f32>;
pub type FeatureSequence64 = model::FeatureSequence<f64>;
pub type ToyModel32 = model::ToyModel<f32>;
pub type ToyModel64 = model::ToyModel<f64>;
pub type AudioClip32 = mix::AudioClip<f32>;
pub type AudioClip64 = mix::AudioClip<f64>;
