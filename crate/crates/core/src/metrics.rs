//! Evaluation metrics: MAE over boundary times, CER/PER over character and
//! syllable sequences, and PCAS over the labeled timeline.
//!
//! PCAS is computed by exact interval intersection rather than frame
//! sampling, so there is no resolution parameter: the timeline is labeled
//! with each side's character within its segment and silence elsewhere,
//! and the matched duration is divided by the total audio duration
//! (silence matching silence counts as correct).

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::align::AlignmentResult;
use crate::codec::{CodecError, Lexicon, LyricsSequence};

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("reference sequence must be non-empty")]
    EmptyReference,
    #[error("{0}")]
    Codec(#[from] CodecError),
    #[error(
        "boundary MAE needs identical character sequences; prediction has {pred:?}, reference {reference:?}"
    )]
    CharacterMismatch { pred: String, reference: String },
    #[error("segments {first} and {second} overlap within one alignment")]
    OverlappingSegments { first: usize, second: usize },
    #[error("total duration {total}s is shorter than the last offset {max_offset}s")]
    TotalDurationTooShort { total: f64, max_offset: f64 },
}

/// Minimum edit distance (insert / delete / substitute, unit costs).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: Levenshtein distance divided by the reference
/// length. May exceed 1 when the prediction is much longer.
pub fn cer(pred: &LyricsSequence, reference: &LyricsSequence) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(levenshtein(pred.chars(), reference.chars()) as f64 / reference.len() as f64)
}

/// Phoneme error rate: CER over the syllable strings both sequences map
/// to under the lexicon.
pub fn per(
    pred: &LyricsSequence,
    reference: &LyricsSequence,
    lex: &Lexicon,
) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let to_syllables = |seq: &LyricsSequence| -> Result<Vec<String>, MetricsError> {
        seq.chars()
            .iter()
            .enumerate()
            .map(|(position, &c)| {
                lex.syllable_str(c)
                    .map(str::to_string)
                    .map_err(|_| CodecError::UnmappedCharacter {
                        character: c,
                        position,
                    })
                    .map_err(MetricsError::from)
            })
            .collect()
    };
    let p = to_syllables(pred)?;
    let r = to_syllables(reference)?;
    Ok(levenshtein(&p, &r) as f64 / r.len() as f64)
}

/// Mean absolute boundary error in seconds, averaged over all `2m`
/// boundary values (onsets and offsets). Requires the prediction and
/// reference to carry the same character sequence.
pub fn mae(pred: &AlignmentResult, reference: &AlignmentResult) -> Result<f64, MetricsError> {
    let same_chars = pred.len() == reference.len()
        && pred
            .segments
            .iter()
            .zip(reference.segments.iter())
            .all(|(p, r)| p.character == r.character);
    if !same_chars {
        return Err(MetricsError::CharacterMismatch {
            pred: pred.characters().chars().iter().collect(),
            reference: reference.characters().chars().iter().collect(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .segments
        .iter()
        .zip(reference.segments.iter())
        .map(|(p, r)| (p.onset - r.onset).abs() + (p.offset - r.offset).abs())
        .sum();
    Ok(total / (2 * pred.len()) as f64)
}

/// Which label comparison PCAS uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcasMode {
    /// Characters must match exactly (silence matches silence).
    Exact,
    /// Syllable strings must match under the lexicon.
    Pronoun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TimelineLabel {
    Silence,
    Character(char),
}

fn check_no_overlap(r: &AlignmentResult) -> Result<(), MetricsError> {
    for i in 1..r.segments.len() {
        if r.segments[i].onset < r.segments[i - 1].offset - 1e-12 {
            return Err(MetricsError::OverlappingSegments {
                first: i - 1,
                second: i,
            });
        }
    }
    Ok(())
}

fn label_at(r: &AlignmentResult, time: f64) -> TimelineLabel {
    r.segments
        .iter()
        .find(|seg| seg.onset <= time && time < seg.offset)
        .map_or(TimelineLabel::Silence, |seg| {
            TimelineLabel::Character(seg.character)
        })
}

/// Percentage of Correctly Aligned Segments: the fraction of
/// `[0, total_duration)` on which the prediction's timeline label matches
/// the reference's, by exact interval intersection.
pub fn pcas(
    pred: &AlignmentResult,
    reference: &AlignmentResult,
    total_duration: f64,
    mode: PcasMode,
    lex: &Lexicon,
) -> Result<f64, MetricsError> {
    check_no_overlap(pred)?;
    check_no_overlap(reference)?;
    let max_offset = pred.max_offset().max(reference.max_offset());
    if total_duration < max_offset - 1e-12 {
        return Err(MetricsError::TotalDurationTooShort {
            total: total_duration,
            max_offset,
        });
    }
    if total_duration <= 0.0 {
        return Ok(1.0);
    }

    let mut cuts = vec![0.0, total_duration];
    for r in [pred, reference] {
        for seg in &r.segments {
            cuts.push(seg.onset);
            cuts.push(seg.offset);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("validated finite times"));
    cuts.dedup();

    let labels_match = |a: TimelineLabel, b: TimelineLabel| -> Result<bool, MetricsError> {
        Ok(match (a, b) {
            (TimelineLabel::Silence, TimelineLabel::Silence) => true,
            (TimelineLabel::Character(x), TimelineLabel::Character(y)) => match mode {
                PcasMode::Exact => x == y,
                PcasMode::Pronoun => lex.syllables_equal(x, y)?,
            },
            _ => false,
        })
    };

    let mut matched = 0.0;
    for window in cuts.windows(2) {
        let (start, end) = (window[0], window[1]);
        if end <= 0.0 || start >= total_duration || end <= start {
            continue;
        }
        let midpoint = 0.5 * (start + end);
        if labels_match(label_at(pred, midpoint), label_at(reference, midpoint))? {
            matched += end - start;
        }
    }
    Ok(matched / total_duration)
}

/// Named metric values; error rates are fractions (CER/PER may exceed 1),
/// PCAS lies in `[0, 1]`, MAE is in seconds.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
#[serde(transparent)]
pub struct EvalReport {
    values: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl fmt::Display for EvalReport {
    /// Aligned human-readable table; error rates and PCAS shown as
    /// percentages, MAE in seconds.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.values.keys().map(|k| k.len()).max().unwrap_or(0);
        for (name, value) in &self.values {
            if name.starts_with("mae") {
                writeln!(f, "{name:width$}  {value:.4} s")?;
            } else {
                writeln!(f, "{name:width$}  {:.2} %", value * 100.0)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{AlignedSegment, AlignmentSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference implementation: plain recursion on the suffix lengths.
    fn levenshtein_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, rest_a)), Some((y, rest_b))) => {
                if x == y {
                    levenshtein_recursive(rest_a, rest_b)
                } else {
                    1 + levenshtein_recursive(rest_a, b)
                        .min(levenshtein_recursive(a, rest_b))
                        .min(levenshtein_recursive(rest_a, rest_b))
                }
            }
        }
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
        assert_eq!(levenshtein(b"", b"ab"), 2);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn levenshtein_matches_recursive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let la = rng.gen_range(0..=6);
            let lb = rng.gen_range(0..=6);
            let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(levenshtein(&a, &b), levenshtein_recursive(&a, &b));
        }
    }

    fn lex() -> Lexicon {
        // 同/童 share a syllable; the others are distinct.
        Lexicon::from_pairs([
            ('同', "tong2"),
            ('童', "tong2"),
            ('音', "yin1"),
            ('乐', "yue4"),
            ('人', "ren2"),
        ])
        .unwrap()
    }

    #[test]
    fn cer_cases() {
        let reference = LyricsSequence::from_text("同音乐人");
        assert_eq!(cer(&reference, &reference).unwrap(), 0.0);
        let one_sub = LyricsSequence::from_text("同音乐童");
        assert_eq!(cer(&one_sub, &reference).unwrap(), 0.25);
        let empty = LyricsSequence::default();
        assert_eq!(
            cer(&empty, &LyricsSequence::from_text("同音乐")).unwrap(),
            1.0
        );
        assert!(matches!(
            cer(&reference, &empty),
            Err(MetricsError::EmptyReference)
        ));
    }

    #[test]
    fn per_homophone_substitution_is_free() {
        let lex = lex();
        let reference = LyricsSequence::from_text("同音");
        let homophone = LyricsSequence::from_text("童音");
        assert!(cer(&homophone, &reference).unwrap() > 0.0);
        assert_eq!(per(&homophone, &reference, &lex).unwrap(), 0.0);
        assert_eq!(per(&reference, &reference, &lex).unwrap(), 0.0);
    }

    #[test]
    fn per_disjoint_syllables_all_substitutions() {
        let lex = lex();
        let a = LyricsSequence::from_text("同音");
        let b = LyricsSequence::from_text("乐人");
        assert_eq!(per(&a, &b, &lex).unwrap(), 1.0);
    }

    #[test]
    fn per_unmapped_character_errors() {
        let lex = lex();
        assert!(per(
            &LyricsSequence::from_text("同X"),
            &LyricsSequence::from_text("同音"),
            &lex
        )
        .is_err());
    }

    fn alignment(segments: Vec<(char, &str, f64, f64)>) -> AlignmentResult {
        AlignmentResult {
            frame_hop: 0.02,
            source: AlignmentSource::Reference,
            segments: segments
                .into_iter()
                .map(|(character, syllable, onset, offset)| AlignedSegment {
                    character,
                    syllable: syllable.into(),
                    onset,
                    offset,
                })
                .collect(),
        }
    }

    #[test]
    fn mae_cases() {
        let reference = alignment(vec![('同', "tong2", 0.0, 1.0), ('音', "yin1", 1.2, 2.0)]);
        assert_eq!(mae(&reference, &reference).unwrap(), 0.0);

        let shifted = alignment(vec![('同', "tong2", 0.1, 1.1), ('音', "yin1", 1.3, 2.1)]);
        assert!((mae(&shifted, &reference).unwrap() - 0.1).abs() < 1e-12);

        // Onsets off by 0.1, offsets exact: (0.1 + 0 + 0.1 + 0) / 4.
        let onsets_off = alignment(vec![('同', "tong2", 0.1, 1.0), ('音', "yin1", 1.3, 2.0)]);
        assert!((mae(&onsets_off, &reference).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn mae_is_symmetric() {
        let a = alignment(vec![('同', "tong2", 0.0, 1.0)]);
        let b = alignment(vec![('同', "tong2", 0.3, 0.9)]);
        assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
    }

    #[test]
    fn mae_requires_identical_characters() {
        let a = alignment(vec![('同', "tong2", 0.0, 1.0)]);
        let b = alignment(vec![('音', "yin1", 0.0, 1.0)]);
        assert!(matches!(
            mae(&a, &b),
            Err(MetricsError::CharacterMismatch { .. })
        ));
    }

    #[test]
    fn pcas_identity_is_one() {
        let lex = lex();
        let r = alignment(vec![('同', "tong2", 0.0, 1.0), ('音', "yin1", 1.0, 2.0)]);
        let value = pcas(&r, &r, 2.0, PcasMode::Exact, &lex).unwrap();
        assert!((value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcas_homophone_prediction() {
        let lex = lex();
        let reference = alignment(vec![('同', "tong2", 0.0, 2.0)]);
        let homophone = alignment(vec![('童', "tong2", 0.0, 2.0)]);
        let exact = pcas(&homophone, &reference, 2.0, PcasMode::Exact, &lex).unwrap();
        let pronoun = pcas(&homophone, &reference, 2.0, PcasMode::Pronoun, &lex).unwrap();
        assert!((exact - 0.0).abs() < 1e-12, "voiced region fully mislabeled");
        assert!((pronoun - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcas_half_overlap_worked_example() {
        // ref char over [0,1), pred same char over [0.5,1.5), total 2.0:
        // matched char on [0.5,1.0) plus matched silence on [1.5,2.0).
        let lex = lex();
        let reference = alignment(vec![('同', "tong2", 0.0, 1.0)]);
        let pred = alignment(vec![('同', "tong2", 0.5, 1.5)]);
        let value = pcas(&pred, &reference, 2.0, PcasMode::Exact, &lex).unwrap();
        assert!((value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pcas_pronoun_never_below_exact() {
        let lex = lex();
        let chars: Vec<char> = "同童音乐人".chars().collect();
        let syl = |c: char| lex.syllable_str(c).unwrap().to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..50 {
            let make = |rng: &mut ChaCha8Rng| {
                let mut t = 0.0;
                let mut segs = Vec::new();
                for _ in 0..rng.gen_range(1..=4) {
                    t += rng.gen_range(0.0..0.4);
                    let start = t;
                    t += rng.gen_range(0.1..0.6);
                    let c = chars[rng.gen_range(0..chars.len())];
                    segs.push((c, syl(c), start, t));
                }
                AlignmentResult {
                    frame_hop: 0.02,
                    source: AlignmentSource::Reference,
                    segments: segs
                        .into_iter()
                        .map(|(character, syllable, onset, offset)| AlignedSegment {
                            character,
                            syllable,
                            onset,
                            offset,
                        })
                        .collect(),
                }
            };
            let pred = make(&mut rng);
            let reference = make(&mut rng);
            let total = pred.max_offset().max(reference.max_offset()) + 0.5;
            let exact = pcas(&pred, &reference, total, PcasMode::Exact, &lex).unwrap();
            let pronoun = pcas(&pred, &reference, total, PcasMode::Pronoun, &lex).unwrap();
            assert!(pronoun >= exact - 1e-12);
            assert!((0.0..=1.0 + 1e-12).contains(&exact));
        }
    }

    #[test]
    fn pcas_rejects_overlap_and_short_duration() {
        let lex = lex();
        let overlapping = alignment(vec![('同', "tong2", 0.0, 1.0), ('音', "yin1", 0.5, 1.5)]);
        let ok = alignment(vec![('同', "tong2", 0.0, 1.0)]);
        assert!(matches!(
            pcas(&overlapping, &ok, 2.0, PcasMode::Exact, &lex),
            Err(MetricsError::OverlappingSegments { .. })
        ));
        assert!(matches!(
            pcas(&ok, &ok, 0.5, PcasMode::Exact, &lex),
            Err(MetricsError::TotalDurationTooShort { .. })
        ));
    }

    #[test]
    fn per_equals_cer_under_injective_lexicon_and_ignores_id_order() {
        // No two characters share a syllable, so syllable-level edits
        // mirror character-level edits exactly; reordering the lexicon
        // lines renumbers ids without changing any metric.
        let forward = Lexicon::parse("同\ttong2\n音\tyin1\n乐\tyue4\n").unwrap();
        let backward = Lexicon::parse("乐\tyue4\n音\tyin1\n同\ttong2\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let chars: Vec<char> = "同音乐".chars().collect();
        for _ in 0..30 {
            let draw = |rng: &mut ChaCha8Rng| -> LyricsSequence {
                (0..rng.gen_range(1..=5))
                    .map(|_| chars[rng.gen_range(0..chars.len())])
                    .collect()
            };
            let pred = draw(&mut rng);
            let reference = draw(&mut rng);
            let c = cer(&pred, &reference).unwrap();
            assert_eq!(per(&pred, &reference, &forward).unwrap(), c);
            assert_eq!(per(&pred, &reference, &backward).unwrap(), c);
        }
    }

    #[test]
    fn report_table_is_aligned() {
        let mut report = EvalReport::new();
        report.insert("cer", 0.25);
        report.insert("mae", 0.0709);
        let text = report.to_string();
        assert!(text.contains("cer"));
        assert!(text.contains("25.00 %"));
        assert!(text.contains("0.0709 s"));
    }
}
