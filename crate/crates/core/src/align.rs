//! Viterbi forced alignment of a syllable sequence against a posteriogram.
//!
//! The decode graph is strictly left-to-right: one mandatory self-looping
//! state per syllable with an optional (skippable) self-looping silence
//! state before, between, and after the syllables. No transition weights,
//! emissions only; the blank class is a CTC training construct and never
//! appears in the graph.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::codec::{CodecError, Lexicon, LyricsSequence, SyllableId};
use crate::posteriogram::{frame_to_time, Posteriogram};
use crate::{scalar, Scalar};

/// Probabilities are floored at this value before taking logs so sparse
/// posteriograms cannot produce -inf lattices.
pub const LOG_FLOOR: f64 = 1e-10;

/// Combinatorial guards for [`brute_force_align`].
pub const BRUTE_FORCE_MAX_FRAMES: usize = 12;
pub const BRUTE_FORCE_MAX_STATES: usize = 9;

#[derive(Error, Debug)]
pub enum AlignError {
    #[error("cannot build an alignment graph from an empty syllable sequence")]
    EmptySyllables,
    #[error("syllable list contains reserved class {0} (silence or blank)")]
    ReservedClass(SyllableId),
    #[error("infeasible alignment: {frames} frames cannot cover {syllables} syllables")]
    Infeasible { frames: usize, syllables: usize },
    #[error("graph class {class} is out of range for a posteriogram with {class_count} classes")]
    ClassOutOfRange { class: SyllableId, class_count: usize },
    #[error(
        "instance exceeds the brute-force guard (frames {frames} > {BRUTE_FORCE_MAX_FRAMES} \
         or states {states} > {BRUTE_FORCE_MAX_STATES})"
    )]
    BruteForceGuard { frames: usize, states: usize },
    #[error("alignment has {spans} spans but the lyrics have {chars} characters")]
    LengthMismatch { spans: usize, chars: usize },
    #[error("span class {0} has no syllable string in the lexicon")]
    UnknownClass(SyllableId),
    #[error("{0}")]
    Codec(#[from] CodecError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid alignment JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("alignment JSON at {path}: {message}")]
    Schema { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// Skippable silence state.
    OptionalSilence,
    /// Mandatory syllable state.
    Syllable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphState {
    pub kind: StateKind,
    pub class: SyllableId,
}

/// Left-to-right decode topology: `[sil, s1, sil, s2, ..., sil]`.
#[derive(Debug, Clone)]
pub struct AlignmentGraph {
    states: Vec<GraphState>,
}

impl AlignmentGraph {
    pub fn states(&self) -> &[GraphState] {
        &self.states
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    /// Number of mandatory syllable states.
    pub fn syllable_count(&self) -> usize {
        (self.states.len() - 1) / 2
    }

    fn max_class(&self) -> SyllableId {
        self.states
            .iter()
            .map(|s| s.class)
            .max()
            .expect("graph is never empty")
    }
}

/// Builds the `2m + 1` state decode graph for `m` syllables.
pub fn build_graph(syllables: &[SyllableId], lex: &Lexicon) -> Result<AlignmentGraph, AlignError> {
    if syllables.is_empty() {
        return Err(AlignError::EmptySyllables);
    }
    let silence = lex.silence_id();
    let blank = lex.blank_id();
    let mut states = Vec::with_capacity(2 * syllables.len() + 1);
    states.push(GraphState {
        kind: StateKind::OptionalSilence,
        class: silence,
    });
    for &syl in syllables {
        if syl == silence || syl == blank {
            return Err(AlignError::ReservedClass(syl));
        }
        states.push(GraphState {
            kind: StateKind::Syllable,
            class: syl,
        });
        states.push(GraphState {
            kind: StateKind::OptionalSilence,
            class: silence,
        });
    }
    Ok(AlignmentGraph { states })
}

/// Time span assigned to one syllable position.
#[derive(Debug, Clone, PartialEq)]
pub struct SyllableSpan {
    pub class: SyllableId,
    pub onset: f64,
    pub offset: f64,
}

/// Per-position alignment output of the Viterbi / brute-force decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanAlignment {
    pub frame_hop: f64,
    pub spans: Vec<SyllableSpan>,
}

fn emission<F: Scalar>(p: &Posteriogram<F>, t: usize, class: SyllableId) -> F {
    let floor = scalar::<F>(LOG_FLOOR);
    p.prob(t, class.index()).max(floor).ln()
}

fn check_instance<F: Scalar>(p: &Posteriogram<F>, g: &AlignmentGraph) -> Result<(), AlignError> {
    let m = g.syllable_count();
    if p.frame_count() < m {
        return Err(AlignError::Infeasible {
            frames: p.frame_count(),
            syllables: m,
        });
    }
    let max_class = g.max_class();
    if max_class.index() >= p.class_count() {
        return Err(AlignError::ClassOutOfRange {
            class: max_class,
            class_count: p.class_count(),
        });
    }
    Ok(())
}

/// Predecessors of `state` in the left-to-right topology, ascending.
/// A two-step move is allowed only when it skips an optional silence.
fn predecessors(states: &[GraphState], state: usize) -> impl Iterator<Item = usize> + '_ {
    let skip = state >= 2 && states[state - 1].kind == StateKind::OptionalSilence;
    let lo = if skip { state - 2 } else { state.saturating_sub(1) };
    lo..=state
}

fn spans_from_path(path: &[usize], g: &AlignmentGraph, frame_hop: f64) -> SpanAlignment {
    let m = g.syllable_count();
    let mut spans = Vec::with_capacity(m);
    for char_idx in 0..m {
        let state = 2 * char_idx + 1;
        let first = path.iter().position(|&s| s == state).expect("mandatory state visited");
        let last = path.iter().rposition(|&s| s == state).expect("mandatory state visited");
        spans.push(SyllableSpan {
            class: g.states()[state].class,
            onset: frame_to_time(first, frame_hop),
            offset: frame_to_time(last + 1, frame_hop),
        });
    }
    SpanAlignment {
        frame_hop,
        spans,
    }
}

/// Maximum-log-probability monotonic assignment of frames to graph states.
///
/// Returns the per-syllable spans and the path log score (sum of emission
/// log-probabilities along the winning path). Ties are broken
/// deterministically: the path that stays in earlier states longest wins,
/// realized by preferring the lowest-index predecessor and end state.
pub fn viterbi_align<F: Scalar>(
    p: &Posteriogram<F>,
    g: &AlignmentGraph,
) -> Result<(SpanAlignment, F), AlignError> {
    check_instance(p, g)?;
    let t_count = p.frame_count();
    let s_count = g.state_count();
    let states = g.states();

    let neg_inf = F::neg_infinity();
    let mut delta = vec![neg_inf; s_count];
    delta[0] = emission(p, 0, states[0].class);
    delta[1] = emission(p, 0, states[1].class);
    let mut backptr = vec![0usize; t_count * s_count];

    let mut next = vec![neg_inf; s_count];
    for t in 1..t_count {
        for (i, state) in states.iter().enumerate() {
            let mut best = neg_inf;
            let mut best_j = i;
            for j in predecessors(states, i) {
                if delta[j] > best {
                    best = delta[j];
                    best_j = j;
                }
            }
            if best == neg_inf {
                next[i] = neg_inf;
            } else {
                next[i] = best + emission(p, t, state.class);
            }
            backptr[t * s_count + i] = best_j;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    // Valid end states: the last syllable or the final silence.
    let mut end = s_count - 2;
    if delta[s_count - 1] > delta[end] {
        end = s_count - 1;
    }
    let score = delta[end];
    debug_assert!(score > neg_inf, "T >= m guarantees a feasible path");

    let mut path = vec![0usize; t_count];
    path[t_count - 1] = end;
    for t in (1..t_count).rev() {
        path[t - 1] = backptr[t * s_count + path[t]];
    }
    Ok((spans_from_path(&path, g, p.frame_hop()), score))
}

/// Exhaustive-enumeration oracle for [`viterbi_align`] on tiny instances.
///
/// Enumerates every monotonic state path and returns the maximum under the
/// same tie-break (among equal scores, the path whose reversed state
/// sequence is lexicographically smallest). Refuses instances above the
/// guard so it cannot be misused at scale.
pub fn brute_force_align<F: Scalar>(
    p: &Posteriogram<F>,
    g: &AlignmentGraph,
) -> Result<(SpanAlignment, F), AlignError> {
    let t_count = p.frame_count();
    let s_count = g.state_count();
    if t_count > BRUTE_FORCE_MAX_FRAMES || s_count > BRUTE_FORCE_MAX_STATES {
        return Err(AlignError::BruteForceGuard {
            frames: t_count,
            states: s_count,
        });
    }
    check_instance(p, g)?;
    let states = g.states();

    let mut best: Option<(Vec<usize>, F)> = None;
    let mut stack: Vec<(Vec<usize>, F)> = Vec::new();
    for start in [0usize, 1] {
        let score = emission(p, 0, states[start].class);
        stack.push((vec![start], score));
    }
    while let Some((path, score)) = stack.pop() {
        if path.len() == t_count {
            let last = *path.last().unwrap();
            if last != s_count - 1 && last != s_count - 2 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((best_path, best_score)) => {
                    score > *best_score
                        || (score == *best_score && reversed_lex_less(&path, best_path))
                }
            };
            if better {
                best = Some((path, score));
            }
            continue;
        }
        let t = path.len();
        let cur = *path.last().unwrap();
        let mut successors = vec![cur, cur + 1];
        if cur + 2 < s_count && states[cur + 1].kind == StateKind::OptionalSilence {
            successors.push(cur + 2);
        }
        for nxt in successors {
            if nxt >= s_count {
                continue;
            }
            let mut new_path = path.clone();
            new_path.push(nxt);
            let new_score = score + emission(p, t, states[nxt].class);
            stack.push((new_path, new_score));
        }
    }
    let (path, score) = best.expect("T >= m guarantees a feasible path");
    Ok((spans_from_path(&path, g, p.frame_hop()), score))
}

/// True iff `a` precedes `b` when comparing state sequences from the last
/// frame backwards (the order induced by the Viterbi backtrace tie-break).
fn reversed_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// How an alignment's labels were obtained; predicted transcripts are
/// flagged so downstream evaluation treats them as hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentSource {
    #[default]
    Reference,
    Predicted,
}

/// One aligned character: its syllable and onset/offset in seconds.
/// The offset is the exclusive edge of the last assigned frame, so
/// abutting characters share a boundary instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSegment {
    pub character: char,
    pub syllable: String,
    pub onset: f64,
    pub offset: f64,
}

/// Per-character alignment of a lyrics sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub frame_hop: f64,
    pub source: AlignmentSource,
    pub segments: Vec<AlignedSegment>,
}

impl AlignmentResult {
    /// Labels the spans of a decode with the characters they were built
    /// from, position by position.
    pub fn from_spans(
        alignment: &SpanAlignment,
        lyrics: &LyricsSequence,
        lex: &Lexicon,
    ) -> Result<Self, AlignError> {
        if alignment.spans.len() != lyrics.len() {
            return Err(AlignError::LengthMismatch {
                spans: alignment.spans.len(),
                chars: lyrics.len(),
            });
        }
        let segments = alignment
            .spans
            .iter()
            .zip(lyrics.chars())
            .map(|(span, &character)| {
                let syllable = lex
                    .syllable_of_id(span.class)
                    .ok_or(AlignError::UnknownClass(span.class))?
                    .to_string();
                Ok(AlignedSegment {
                    character,
                    syllable,
                    onset: span.onset,
                    offset: span.offset,
                })
            })
            .collect::<Result<Vec<_>, AlignError>>()?;
        let result = Self {
            frame_hop: alignment.frame_hop,
            source: AlignmentSource::Reference,
            segments,
        };
        result.validate()?;
        Ok(result)
    }

    pub fn with_source(mut self, source: AlignmentSource) -> Self {
        self.source = source;
        self
    }

    /// Checks the boundary invariants: non-negative finite times,
    /// `onset < offset` per segment, onsets and offsets non-decreasing.
    pub fn validate(&self) -> Result<(), AlignError> {
        let schema = |path: String, message: String| AlignError::Schema { path, message };
        if !(self.frame_hop.is_finite() && self.frame_hop > 0.0) {
            return Err(schema(
                "frame_hop".into(),
                format!("must be positive and finite, got {}", self.frame_hop),
            ));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.onset.is_finite() && seg.offset.is_finite() && seg.onset >= 0.0) {
                return Err(schema(
                    format!("segments[{i}]"),
                    format!("times must be finite and non-negative, got [{}, {}]", seg.onset, seg.offset),
                ));
            }
            if seg.offset <= seg.onset {
                return Err(schema(
                    format!("segments[{i}].offset"),
                    format!("offset {} must exceed onset {}", seg.offset, seg.onset),
                ));
            }
            if i > 0 {
                let prev = &self.segments[i - 1];
                if seg.onset < prev.onset || seg.offset < prev.offset {
                    return Err(schema(
                        format!("segments[{i}]"),
                        "onsets and offsets must be non-decreasing across segments".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The character sequence carried by the segments.
    pub fn characters(&self) -> LyricsSequence {
        self.segments.iter().map(|s| s.character).collect()
    }

    pub fn max_offset(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.offset)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Full pipeline: lyrics -> syllables -> graph -> Viterbi -> labeled result.
pub fn align_lyrics<F: Scalar>(
    p: &Posteriogram<F>,
    lyrics: &LyricsSequence,
    lex: &Lexicon,
) -> Result<(AlignmentResult, F), AlignError> {
    let syllables = lex.chars_to_syllables(lyrics)?;
    let graph = build_graph(&syllables, lex)?;
    let (spans, score) = viterbi_align(p, &graph)?;
    let result = AlignmentResult::from_spans(&spans, lyrics, lex)?;
    Ok((result, score))
}

/// Serializes an alignment to its JSON interchange form. Times are written
/// with 6-decimal fixed formatting; the `source` field appears only for
/// predicted transcripts.
pub fn alignment_to_json(r: &AlignmentResult) -> String {
    let mut out = String::new();
    let _ = write!(out, "{{\"frame_hop\": {:.6}", r.frame_hop);
    if r.source == AlignmentSource::Predicted {
        out.push_str(", \"source\": \"predicted\"");
    }
    out.push_str(", \"segments\": [");
    for (i, seg) in r.segments.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"char\": {}, \"syllable\": {}, \"onset\": {:.6}, \"offset\": {:.6}}}",
            serde_json::to_string(&seg.character.to_string()).expect("string encodes"),
            serde_json::to_string(&seg.syllable).expect("string encodes"),
            seg.onset,
            seg.offset
        );
    }
    out.push_str("]}\n");
    out
}

#[derive(Deserialize)]
struct JsonAlignment {
    frame_hop: f64,
    #[serde(default)]
    source: Option<String>,
    segments: Vec<JsonSegment>,
}

#[derive(Deserialize)]
struct JsonSegment {
    #[serde(rename = "char")]
    character: String,
    syllable: String,
    onset: f64,
    offset: f64,
}

/// Parses and validates the JSON interchange form.
pub fn json_to_alignment(text: &str) -> Result<AlignmentResult, AlignError> {
    let raw: JsonAlignment = serde_json::from_str(text)?;
    let source = match raw.source.as_deref() {
        None | Some("reference") => AlignmentSource::Reference,
        Some("predicted") => AlignmentSource::Predicted,
        Some(other) => {
            return Err(AlignError::Schema {
                path: "source".into(),
                message: format!("expected \"reference\" or \"predicted\", got {other:?}"),
            })
        }
    };
    let mut segments = Vec::with_capacity(raw.segments.len());
    for (i, seg) in raw.segments.into_iter().enumerate() {
        let mut chars = seg.character.chars();
        let character = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(AlignError::Schema {
                    path: format!("segments[{i}].char"),
                    message: format!("expected a single character, got {:?}", seg.character),
                })
            }
        };
        segments.push(AlignedSegment {
            character,
            syllable: seg.syllable,
            onset: seg.onset,
            offset: seg.offset,
        });
    }
    let result = AlignmentResult {
        frame_hop: raw.frame_hop,
        source,
        segments,
    };
    result.validate()?;
    Ok(result)
}

/// Reads an alignment JSON file.
pub fn read_alignment(path: impl AsRef<Path>) -> Result<AlignmentResult, AlignError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| AlignError::Io {
        path: path.display().to_string(),
        source,
    })?;
    json_to_alignment(&text)
}

/// Writes an alignment JSON file atomically.
pub fn write_alignment(r: &AlignmentResult, path: impl AsRef<Path>) -> Result<(), AlignError> {
    let path = path.as_ref();
    crate::fsutil::write_atomic(path, alignment_to_json(r).as_bytes()).map_err(|source| {
        AlignError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posteriogram::normalize_rows;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lex3() -> Lexicon {
        // Classes: a=0, b=1, silence=2, blank=3.
        Lexicon::from_pairs([('甲', "a"), ('乙', "b")]).unwrap()
    }

    fn post(rows: Vec<[f64; 4]>, hop: f64) -> Posteriogram<f64> {
        let t = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Posteriogram::new(Array2::from_shape_vec((t, 4), flat).unwrap(), hop).unwrap()
    }

    #[test]
    fn graph_shapes() {
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let b = lex.syllable_id('乙').unwrap();
        let g1 = build_graph(&[a], &lex).unwrap();
        assert_eq!(g1.state_count(), 3);
        assert_eq!(
            g1.states().iter().map(|s| s.kind).collect::<Vec<_>>(),
            vec![
                StateKind::OptionalSilence,
                StateKind::Syllable,
                StateKind::OptionalSilence
            ]
        );
        let g2 = build_graph(&[a, b], &lex).unwrap();
        assert_eq!(g2.state_count(), 5);
        assert!(matches!(
            build_graph(&[], &lex),
            Err(AlignError::EmptySyllables)
        ));
    }

    #[test]
    fn reserved_classes_rejected() {
        let lex = lex3();
        assert!(matches!(
            build_graph(&[lex.silence_id()], &lex),
            Err(AlignError::ReservedClass(_))
        ));
        assert!(matches!(
            build_graph(&[lex.blank_id()], &lex),
            Err(AlignError::ReservedClass(_))
        ));
    }

    #[test]
    fn silence_then_syllable_boundaries() {
        // frame 0 silence-dominant, frames 1-2 syllable-dominant:
        // the character occupies frames 1..3.
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let g = build_graph(&[a], &lex).unwrap();
        let hop = 0.02;
        let p = post(
            vec![
                [0.05, 0.03, 0.9, 0.02],
                [0.9, 0.04, 0.04, 0.02],
                [0.9, 0.04, 0.04, 0.02],
            ],
            hop,
        );
        let (spans, score) = viterbi_align(&p, &g).unwrap();
        let (oracle_spans, oracle_score) = brute_force_align(&p, &g).unwrap();
        assert_eq!(spans, oracle_spans);
        assert!((score - oracle_score).abs() < 1e-9);
        assert_eq!(spans.spans.len(), 1);
        assert!((spans.spans[0].onset - hop).abs() < 1e-12);
        assert!((spans.spans[0].offset - 3.0 * hop).abs() < 1e-12);
    }

    #[test]
    fn t_equals_m_one_frame_per_syllable() {
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let b = lex.syllable_id('乙').unwrap();
        let g = build_graph(&[a, b], &lex).unwrap();
        let p = post(vec![[0.25, 0.25, 0.25, 0.25], [0.1, 0.2, 0.3, 0.4]], 0.01);
        let (spans, _) = viterbi_align(&p, &g).unwrap();
        assert!((spans.spans[0].onset - 0.0).abs() < 1e-12);
        assert!((spans.spans[0].offset - 0.01).abs() < 1e-12);
        assert!((spans.spans[1].onset - 0.01).abs() < 1e-12);
        assert!((spans.spans[1].offset - 0.02).abs() < 1e-12);
    }

    #[test]
    fn infeasible_when_frames_below_syllables() {
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let b = lex.syllable_id('乙').unwrap();
        let g = build_graph(&[a, b], &lex).unwrap();
        let p = post(vec![[0.25, 0.25, 0.25, 0.25]], 0.01);
        assert!(matches!(
            viterbi_align(&p, &g),
            Err(AlignError::Infeasible {
                frames: 1,
                syllables: 2
            })
        ));
    }

    #[test]
    fn class_out_of_range_rejected() {
        // Posteriogram with 3 classes cannot host silence_id = 3.
        let lex = Lexicon::from_pairs([('甲', "a"), ('乙', "b"), ('丙', "c")]).unwrap();
        let a = lex.syllable_id('甲').unwrap();
        let g = build_graph(&[a], &lex).unwrap();
        let p = Posteriogram::new(array![[0.2f64, 0.3, 0.5]], 0.01).unwrap();
        assert!(matches!(
            viterbi_align(&p, &g),
            Err(AlignError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_ties_push_transitions_late() {
        // With all emissions equal, the winning path keeps earlier states
        // as long as possible: the single character lands on the last frame.
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let g = build_graph(&[a], &lex).unwrap();
        let p = post(vec![[0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25]], 0.01);
        let (spans, _) = viterbi_align(&p, &g).unwrap();
        let (oracle, _) = brute_force_align(&p, &g).unwrap();
        assert_eq!(spans, oracle);
        assert!((spans.spans[0].onset - 0.01).abs() < 1e-12);
        assert!((spans.spans[0].offset - 0.02).abs() < 1e-12);
    }

    #[test]
    fn brute_force_guard_refuses_large_instances() {
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let g = build_graph(&[a], &lex).unwrap();
        let rows = vec![[0.25, 0.25, 0.25, 0.25]; 13];
        let p = post(rows, 0.01);
        assert!(matches!(
            brute_force_align(&p, &g),
            Err(AlignError::BruteForceGuard { .. })
        ));
    }

    fn random_instance(rng: &mut ChaCha8Rng, t: usize, m: usize, c: usize) -> Posteriogram<f64> {
        let raw = Array2::from_shape_fn((t, c), |_| rng.gen_range(0.01..1.0));
        let _ = m;
        Posteriogram::new(normalize_rows(raw), 0.02).unwrap()
    }

    #[test]
    fn viterbi_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let c = rng.gen_range(3..=5);
            let n_syll = c - 2;
            let m = rng.gen_range(1..=3.min(n_syll * 2)).min(3);
            let t = rng.gen_range(m..=6);
            let pairs: Vec<(char, String)> = (0..n_syll)
                .map(|i| (char::from_u32('a' as u32 + i as u32).unwrap(), format!("s{i}")))
                .collect();
            let lex = Lexicon::from_pairs(pairs).unwrap();
            let syllables: Vec<SyllableId> = (0..m)
                .map(|_| SyllableId(rng.gen_range(0..n_syll)))
                .collect();
            let g = build_graph(&syllables, &lex).unwrap();
            let p = random_instance(&mut rng, t, m, c);
            let (v_spans, v_score) = viterbi_align(&p, &g).unwrap();
            let (o_spans, o_score) = brute_force_align(&p, &g).unwrap();
            assert!((v_score - o_score).abs() < 1e-9, "score mismatch");
            assert_eq!(v_spans, o_spans, "boundary mismatch");
        }
    }

    #[test]
    fn spans_are_ordered_and_within_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let lex = lex3();
            let m = rng.gen_range(1..=3);
            let syllables: Vec<SyllableId> =
                (0..m).map(|_| SyllableId(rng.gen_range(0..2))).collect();
            let g = build_graph(&syllables, &lex).unwrap();
            let t = rng.gen_range(m..=10);
            let p = random_instance(&mut rng, t, m, 4);
            let (spans, _) = viterbi_align(&p, &g).unwrap();
            let duration = p.duration();
            let mut covered = 0.0;
            for (i, span) in spans.spans.iter().enumerate() {
                assert!(span.onset < span.offset);
                assert!(span.onset >= -1e-12 && span.offset <= duration + 1e-9);
                if i > 0 {
                    assert!(span.onset >= spans.spans[i - 1].offset - 1e-12);
                }
                covered += span.offset - span.onset;
            }
            assert!(covered <= duration + 1e-9);
        }
    }

    /// Frame ranges `[first, last)` of each span.
    fn span_frames(spans: &SpanAlignment) -> Vec<(usize, usize)> {
        spans
            .spans
            .iter()
            .map(|s| {
                (
                    (s.onset / spans.frame_hop).round() as usize,
                    (s.offset / spans.frame_hop).round() as usize,
                )
            })
            .collect()
    }

    /// Score of a frame-range assignment: span frames emit their class,
    /// everything else emits silence.
    fn ranges_score(
        p: &Posteriogram<f64>,
        ranges: &[(usize, usize)],
        spans: &SpanAlignment,
        silence: SyllableId,
    ) -> f64 {
        (0..p.frame_count()).fold(0.0, |acc, t| {
            let class = ranges
                .iter()
                .position(|&(f, l)| f <= t && t < l)
                .map_or(silence, |i| spans.spans[i].class);
            acc + emission(p, t, class)
        })
    }

    #[test]
    fn single_boundary_moves_never_improve_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let lex = lex3();
        for _ in 0..30 {
            let m = rng.gen_range(1..=3);
            let syllables: Vec<SyllableId> =
                (0..m).map(|_| SyllableId(rng.gen_range(0..2))).collect();
            let g = build_graph(&syllables, &lex).unwrap();
            let t = rng.gen_range((m + 2)..=10);
            let p = random_instance(&mut rng, t, m, 4);
            let (spans, score) = viterbi_align(&p, &g).unwrap();
            let ranges = span_frames(&spans);
            assert!((ranges_score(&p, &ranges, &spans, lex.silence_id()) - score).abs() < 1e-9);

            // Each candidate move shifts one span edge by one frame; the
            // donor frame becomes silence (or is taken from a neighbor),
            // which is always a legal monotone path in this topology.
            for i in 0..ranges.len() {
                let (first, last) = ranges[i];
                let mut candidates = Vec::new();
                let prev_end = if i > 0 { ranges[i - 1].1 } else { 0 };
                let next_start = ranges.get(i + 1).map_or(t, |&(f, _)| f);
                if first > prev_end {
                    candidates.push((i, (first - 1, last)));
                }
                if first > 0 && first == prev_end && i > 0 && ranges[i - 1].1 - ranges[i - 1].0 > 1 {
                    // Steal the last frame of the abutting previous span.
                    let mut moved = ranges.clone();
                    moved[i - 1].1 -= 1;
                    moved[i] = (first - 1, last);
                    let perturbed = ranges_score(&p, &moved, &spans, lex.silence_id());
                    assert!(perturbed <= score + 1e-9, "perturbation improved the score");
                }
                if last - first > 1 {
                    candidates.push((i, (first + 1, last)));
                    candidates.push((i, (first, last - 1)));
                }
                if last < next_start {
                    candidates.push((i, (first, last + 1)));
                }
                for (idx, range) in candidates {
                    let mut moved = ranges.clone();
                    moved[idx] = range;
                    let perturbed = ranges_score(&p, &moved, &spans, lex.silence_id());
                    assert!(perturbed <= score + 1e-9, "perturbation improved the score");
                }
            }
        }
    }

    #[test]
    fn row_scaling_shifts_score_by_t_log_c() {
        let lex = lex3();
        let a = lex.syllable_id('甲').unwrap();
        let b = lex.syllable_id('乙').unwrap();
        let g = build_graph(&[a, b], &lex).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 6;
        let base = Array2::from_shape_fn((t, 4), |_| rng.gen_range(0.05..1.0f64));
        let normalized = normalize_rows(base);
        let p = Posteriogram::new(normalized.clone(), 0.02).unwrap();
        let scale = 1.7;
        let scaled = Posteriogram::new_unchecked(normalized.mapv(|v| v * scale), 0.02);
        let (spans, score) = viterbi_align(&p, &g).unwrap();
        let (spans_scaled, score_scaled) = viterbi_align(&scaled, &g).unwrap();
        assert_eq!(spans, spans_scaled);
        assert!((score_scaled - (score + t as f64 * scale.ln())).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let r = AlignmentResult {
            frame_hop: 0.02,
            source: AlignmentSource::Reference,
            segments: vec![
                AlignedSegment {
                    character: '好',
                    syllable: "hao3".into(),
                    onset: 1.2,
                    offset: 1.74,
                },
                AlignedSegment {
                    character: '你',
                    syllable: "ni3".into(),
                    onset: 1.74,
                    offset: 2.0,
                },
            ],
        };
        let text = alignment_to_json(&r);
        let back = json_to_alignment(&text).unwrap();
        assert_eq!(back.segments.len(), 2);
        for (x, y) in r.segments.iter().zip(back.segments.iter()) {
            assert_eq!(x.character, y.character);
            assert_eq!(x.syllable, y.syllable);
            assert!((x.onset - y.onset).abs() < 1e-6);
            assert!((x.offset - y.offset).abs() < 1e-6);
        }
    }

    #[test]
    fn json_source_round_trip() {
        let r = AlignmentResult {
            frame_hop: 0.02,
            source: AlignmentSource::Predicted,
            segments: vec![AlignedSegment {
                character: '好',
                syllable: "hao3".into(),
                onset: 0.0,
                offset: 0.5,
            }],
        };
        let text = alignment_to_json(&r);
        assert!(text.contains("\"source\": \"predicted\""));
        assert_eq!(json_to_alignment(&text).unwrap().source, AlignmentSource::Predicted);
    }

    #[test]
    fn json_rejects_inverted_segment() {
        let text = r#"{"frame_hop": 0.02, "segments": [
            {"char": "好", "syllable": "hao3", "onset": 1.5, "offset": 1.2}]}"#;
        match json_to_alignment(text) {
            Err(AlignError::Schema { path, .. }) => assert_eq!(path, "segments[0].offset"),
            other => panic!("expected Schema error, got {other:?}"),
        }
    }

    #[test]
    fn json_empty_segments_valid() {
        let text = r#"{"frame_hop": 0.02, "segments": []}"#;
        let r = json_to_alignment(text).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn json_rejects_multi_char_label() {
        let text = r#"{"frame_hop": 0.02, "segments": [
            {"char": "好吗", "syllable": "hao3", "onset": 0.0, "offset": 1.0}]}"#;
        assert!(matches!(json_to_alignment(text), Err(AlignError::Schema { .. })));
    }

    #[test]
    fn align_lyrics_end_to_end() {
        let lex = lex3();
        let p = post(
            vec![
                [0.9, 0.03, 0.05, 0.02],
                [0.9, 0.03, 0.05, 0.02],
                [0.03, 0.9, 0.05, 0.02],
            ],
            0.02,
        );
        let lyrics = LyricsSequence::from_text("甲乙");
        let (result, _) = align_lyrics(&p, &lyrics, &lex).unwrap();
        assert_eq!(result.segments.len(), 2);
        assert_eq!(result.segments[0].character, '甲');
        assert_eq!(result.segments[0].syllable, "a");
        assert!((result.segments[0].onset - 0.0).abs() < 1e-12);
        assert!((result.segments[0].offset - 0.04).abs() < 1e-12);
        assert!((result.segments[1].onset - 0.04).abs() < 1e-12);
        assert!((result.segments[1].offset - 0.06).abs() < 1e-12);
    }
}
