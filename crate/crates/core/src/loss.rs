//! The alignment training objective: CTC plus framewise cross-entropy,
//! combined as an unweighted sum, with analytic gradients.
//!
//! Everything is computed in log space; the CTC forward/backward
//! recursions run over the blank-augmented label sequence. Gradients are
//! returned alongside the losses so no autodiff framework is required.

use ndarray::Array2;
use thiserror::Error;

use crate::align::AlignmentResult;
use crate::codec::{Lexicon, SyllableId};
use crate::{scalar, Scalar};

#[derive(Error, Debug)]
pub enum LossError {
    #[error("logit matrix contains a non-finite entry at frame {frame}, class {class}")]
    NonFiniteLogit { frame: usize, class: usize },
    #[error("logit sequence must have at least one frame")]
    NoFrames,
    #[error("label {label} is out of range for {class_count} classes")]
    LabelOutOfRange { label: SyllableId, class_count: usize },
    #[error("blank {blank} is out of range for {class_count} classes")]
    BlankOutOfRange { blank: SyllableId, class_count: usize },
    #[error("CTC labels must not contain the blank class {0}")]
    BlankInLabels(SyllableId),
    #[error("infeasible CTC instance: {frames} frames < minimum {min_frames} for the label sequence")]
    Infeasible { frames: usize, min_frames: usize },
    #[error("targets cover {targets} frames but the logits cover {frames}")]
    LengthMismatch { targets: usize, frames: usize },
    #[error("reference segments {first} and {second} overlap")]
    OverlappingSegments { first: usize, second: usize },
    #[error("reference segment {index} ends at {offset}s, beyond the covered {duration}s")]
    ReferenceOutOfRange {
        index: usize,
        offset: f64,
        duration: f64,
    },
    #[error("syllable {0:?} is not in the lexicon")]
    UnknownSyllable(String),
}

/// Pre-softmax scores, `T x C`; the differentiable precursor of a
/// posteriogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence<F: Scalar> {
    logits: Array2<F>,
}

impl<F: Scalar> LogitSequence<F> {
    pub fn new(logits: Array2<F>) -> Result<Self, LossError> {
        if logits.nrows() == 0 {
            return Err(LossError::NoFrames);
        }
        for ((t, c), &v) in logits.indexed_iter() {
            if !v.is_finite() {
                return Err(LossError::NonFiniteLogit { frame: t, class: c });
            }
        }
        Ok(Self { logits })
    }

    pub fn frame_count(&self) -> usize {
        self.logits.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<F> {
        &self.logits
    }
}

/// Per-frame class labels (syllable or silence, never blank) used as the
/// cross-entropy targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramewiseTargets {
    labels: Vec<SyllableId>,
}

impl FramewiseTargets {
    pub fn new(labels: Vec<SyllableId>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[SyllableId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Builds framewise targets from a reference alignment by the midpoint
/// rule: frame `t` (midpoint `(t + 0.5) * hop`) takes the syllable of the
/// segment whose `[onset, offset)` contains the midpoint, else silence.
pub fn framewise_targets_from_alignment(
    reference: &AlignmentResult,
    frame_count: usize,
    frame_hop: f64,
    lex: &Lexicon,
) -> Result<FramewiseTargets, LossError> {
    let duration = frame_count as f64 * frame_hop;
    for (i, seg) in reference.segments.iter().enumerate() {
        if seg.offset > duration + 1e-9 {
            return Err(LossError::ReferenceOutOfRange {
                index: i,
                offset: seg.offset,
                duration,
            });
        }
        if i > 0 && seg.onset < reference.segments[i - 1].offset - 1e-12 {
            return Err(LossError::OverlappingSegments {
                first: i - 1,
                second: i,
            });
        }
    }
    let classes: Vec<SyllableId> = reference
        .segments
        .iter()
        .map(|seg| {
            lex.id_of_syllable(&seg.syllable)
                .ok_or_else(|| LossError::UnknownSyllable(seg.syllable.clone()))
        })
        .collect::<Result<_, _>>()?;
    let silence = lex.silence_id();
    let labels = (0..frame_count)
        .map(|t| {
            let midpoint = (t as f64 + 0.5) * frame_hop;
            reference
                .segments
                .iter()
                .position(|seg| seg.onset <= midpoint && midpoint < seg.offset)
                .map_or(silence, |i| classes[i])
        })
        .collect();
    Ok(FramewiseTargets::new(labels))
}

/// Log-softmax of every row.
pub(crate) fn log_softmax<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let log_z = row
            .iter()
            .fold(F::zero(), |acc, &v| acc + (v - max).exp())
            .ln()
            + max;
        row.mapv_inplace(|v| v - log_z);
    }
    out
}

fn lse2<F: Scalar>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3<F: Scalar>(a: F, b: F, c: F) -> F {
    lse2(lse2(a, b), c)
}

/// Minimum frame count a CTC label sequence needs: one frame per label
/// plus a forced blank between equal consecutive labels.
pub fn ctc_min_frames(labels: &[SyllableId]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

struct CtcLattice<F: Scalar> {
    lsm: Array2<F>,
    augmented: Vec<SyllableId>,
    log_alpha: Array2<F>,
    log_beta: Array2<F>,
    log_prob: F,
}

fn ctc_forward_backward<F: Scalar>(
    logits: &LogitSequence<F>,
    labels: &[SyllableId],
    blank: SyllableId,
) -> Result<CtcLattice<F>, LossError> {
    let t_count = logits.frame_count();
    let c_count = logits.class_count();
    if blank.index() >= c_count {
        return Err(LossError::BlankOutOfRange {
            blank,
            class_count: c_count,
        });
    }
    for &label in labels {
        if label == blank {
            return Err(LossError::BlankInLabels(blank));
        }
        if label.index() >= c_count {
            return Err(LossError::LabelOutOfRange {
                label,
                class_count: c_count,
            });
        }
    }
    let min_frames = ctc_min_frames(labels);
    if t_count < min_frames {
        return Err(LossError::Infeasible {
            frames: t_count,
            min_frames,
        });
    }

    // Blank-augmented sequence l': blank, l1, blank, l2, ..., blank.
    let mut augmented = Vec::with_capacity(2 * labels.len() + 1);
    augmented.push(blank);
    for &label in labels {
        augmented.push(label);
        augmented.push(blank);
    }
    let s_count = augmented.len();

    let lsm = log_softmax(logits.logits());
    let neg_inf = F::neg_infinity();

    let mut log_alpha = Array2::from_elem((t_count, s_count), neg_inf);
    log_alpha[(0, 0)] = lsm[(0, augmented[0].index())];
    if s_count > 1 {
        log_alpha[(0, 1)] = lsm[(0, augmented[1].index())];
    }
    for t in 1..t_count {
        for s in 0..s_count {
            let stay = log_alpha[(t - 1, s)];
            let step = if s >= 1 { log_alpha[(t - 1, s - 1)] } else { neg_inf };
            let skip = if s >= 2 && augmented[s] != blank && augmented[s] != augmented[s - 2] {
                log_alpha[(t - 1, s - 2)]
            } else {
                neg_inf
            };
            let total = lse3(stay, step, skip);
            if total != neg_inf {
                log_alpha[(t, s)] = total + lsm[(t, augmented[s].index())];
            }
        }
    }

    let mut log_beta = Array2::from_elem((t_count, s_count), neg_inf);
    log_beta[(t_count - 1, s_count - 1)] = lsm[(t_count - 1, augmented[s_count - 1].index())];
    if s_count > 1 {
        log_beta[(t_count - 1, s_count - 2)] = lsm[(t_count - 1, augmented[s_count - 2].index())];
    }
    for t in (0..t_count - 1).rev() {
        for s in 0..s_count {
            let stay = log_beta[(t + 1, s)];
            let step = if s + 1 < s_count { log_beta[(t + 1, s + 1)] } else { neg_inf };
            let skip = if s + 2 < s_count
                && augmented[s + 2] != blank
                && augmented[s + 2] != augmented[s]
            {
                log_beta[(t + 1, s + 2)]
            } else {
                neg_inf
            };
            let total = lse3(stay, step, skip);
            if total != neg_inf {
                log_beta[(t, s)] = total + lsm[(t, augmented[s].index())];
            }
        }
    }

    let log_prob = if s_count > 1 {
        lse2(
            log_alpha[(t_count - 1, s_count - 1)],
            log_alpha[(t_count - 1, s_count - 2)],
        )
    } else {
        log_alpha[(t_count - 1, 0)]
    };

    Ok(CtcLattice {
        lsm,
        augmented,
        log_alpha,
        log_beta,
        log_prob,
    })
}

/// CTC loss `-log p(labels | softmax(logits))` and its gradient with
/// respect to the logits.
///
/// The probability marginalizes over every blank-augmented path via the
/// forward recursion in log space. Infeasible instances (too few frames
/// for the label sequence) are an error, never an infinite loss.
pub fn ctc_loss<F: Scalar>(
    logits: &LogitSequence<F>,
    labels: &[SyllableId],
    blank: SyllableId,
) -> Result<(F, Array2<F>), LossError> {
    let lattice = ctc_forward_backward(logits, labels, blank)?;
    let t_count = logits.frame_count();
    let c_count = logits.class_count();
    let s_count = lattice.augmented.len();
    let neg_inf = F::neg_infinity();

    // grad[t][k] = y[t][k] - gamma[t][k], where gamma is the posterior
    // mass of paths emitting class k at frame t.
    let mut grad = Array2::from_elem((t_count, c_count), F::zero());
    for t in 0..t_count {
        let mut log_mass = vec![neg_inf; c_count];
        for s in 0..s_count {
            let through = lattice.log_alpha[(t, s)] + lattice.log_beta[(t, s)];
            let k = lattice.augmented[s].index();
            log_mass[k] = lse2(log_mass[k], through);
        }
        for k in 0..c_count {
            let y = lattice.lsm[(t, k)].exp();
            let gamma = if log_mass[k] == neg_inf {
                F::zero()
            } else {
                (log_mass[k] - lattice.lsm[(t, k)] - lattice.log_prob).exp()
            };
            grad[(t, k)] = y - gamma;
        }
    }
    Ok((-lattice.log_prob, grad))
}

/// Mean framewise cross-entropy against the targets and its gradient
/// `(softmax - onehot) / T`.
pub fn framewise_ce<F: Scalar>(
    logits: &LogitSequence<F>,
    targets: &FramewiseTargets,
) -> Result<(F, Array2<F>), LossError> {
    let t_count = logits.frame_count();
    let c_count = logits.class_count();
    if targets.len() != t_count {
        return Err(LossError::LengthMismatch {
            targets: targets.len(),
            frames: t_count,
        });
    }
    for &label in targets.labels() {
        if label.index() >= c_count {
            return Err(LossError::LabelOutOfRange {
                label,
                class_count: c_count,
            });
        }
    }
    let lsm = log_softmax(logits.logits());
    let inv_t = F::one() / scalar::<F>(t_count as f64);
    let mut loss = F::zero();
    let mut grad = lsm.mapv(|v| v.exp() * inv_t);
    for (t, &label) in targets.labels().iter().enumerate() {
        loss -= lsm[(t, label.index())];
        grad[(t, label.index())] = grad[(t, label.index())] - inv_t;
    }
    Ok((loss * inv_t, grad))
}

/// The full objective: `ctc_loss + framewise_ce`, gradients summed,
/// no weighting knobs.
pub fn combined_alignment_loss<F: Scalar>(
    logits: &LogitSequence<F>,
    labels: &[SyllableId],
    targets: &FramewiseTargets,
    blank: SyllableId,
) -> Result<(F, Array2<F>), LossError> {
    let (ctc, ctc_grad) = ctc_loss(logits, labels, blank)?;
    let (ce, ce_grad) = framewise_ce(logits, targets)?;
    Ok((ctc + ce, ctc_grad + ce_grad))
}
