//! Character-to-syllable mapping and the model's output class space.
//!
//! A [`Lexicon`] assigns every known character exactly one syllable string
//! (e.g. `好 -> hao3`). Distinct syllable strings become dense class ids in
//! first-appearance order, followed by two reserved classes: silence and the
//! CTC blank. Lexicon lookup never yields the reserved ids.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Dense index into the model's class space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SyllableId(pub usize);

impl SyllableId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for SyllableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Error, Debug)]
pub enum CodecError {
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("lexicon line {line}: expected `character<TAB>syllable`, got {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("lexicon line {line}: character field {field:?} is not a single character")]
    NotOneCharacter { line: usize, field: String },
    #[error("character '{character}' maps to both {existing:?} and {conflicting:?}")]
    ConflictingEntry {
        character: char,
        existing: String,
        conflicting: String,
    },
    #[error("character '{character}' at position {position} is not in the lexicon")]
    UnmappedCharacter { character: char, position: usize },
}

/// Ordered character sequence to be aligned or scored (the lyrics).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LyricsSequence {
    chars: Vec<char>,
}

impl LyricsSequence {
    pub fn new(chars: Vec<char>) -> Self {
        Self { chars }
    }

    /// Builds a sequence from raw text, dropping whitespace (including
    /// newlines). Any other normalization is the caller's job.
    pub fn from_text(text: &str) -> Self {
        Self {
            chars: text.chars().filter(|c| !c.is_whitespace()).collect(),
        }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

impl FromIterator<char> for LyricsSequence {
    fn from_iter<I: IntoIterator<Item = char>>(iter: I) -> Self {
        Self {
            chars: iter.into_iter().collect(),
        }
    }
}

/// Immutable character -> syllable-class mapping plus the reserved classes.
///
/// `class_count = |syllables| + 2`; the two extra ids are silence and the
/// CTC blank, in that order after the last syllable id.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<char, usize>,
    syllable_table: Vec<String>,
    syllable_index: HashMap<String, usize>,
}

impl Lexicon {
    /// Builds a lexicon from `(character, syllable)` pairs. Pairs repeating
    /// an identical mapping are collapsed; conflicting ones are an error.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, CodecError>
    where
        I: IntoIterator<Item = (char, S)>,
        S: Into<String>,
    {
        let mut lex = Self {
            entries: HashMap::new(),
            syllable_table: Vec::new(),
            syllable_index: HashMap::new(),
        };
        for (ch, syl) in pairs {
            lex.insert(ch, syl.into())?;
        }
        Ok(lex)
    }

    /// Loads a lexicon from a UTF-8 TSV file: one `character<TAB>syllable`
    /// per line, `#`-prefixed comment lines and blank lines ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses lexicon TSV text; see [`Lexicon::load`] for the format.
    pub fn parse(text: &str) -> Result<Self, CodecError> {
        let mut lex = Self {
            entries: HashMap::new(),
            syllable_table: Vec::new(),
            syllable_index: HashMap::new(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (char_field, syllable) =
                line.split_once('\t')
                    .ok_or_else(|| CodecError::MalformedLine {
                        line: line_no,
                        content: line.to_string(),
                    })?;
            let mut chars = char_field.chars();
            let character = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(CodecError::NotOneCharacter {
                        line: line_no,
                        field: char_field.to_string(),
                    })
                }
            };
            if syllable.is_empty() || syllable.contains(char::is_whitespace) {
                return Err(CodecError::MalformedLine {
                    line: line_no,
                    content: line.to_string(),
                });
            }
            lex.insert(character, syllable.to_string())?;
        }
        Ok(lex)
    }

    fn insert(&mut self, character: char, syllable: String) -> Result<(), CodecError> {
        if let Some(&existing) = self.entries.get(&character) {
            if self.syllable_table[existing] == syllable {
                return Ok(());
            }
            return Err(CodecError::ConflictingEntry {
                character,
                existing: self.syllable_table[existing].clone(),
                conflicting: syllable,
            });
        }
        let syl_idx = match self.syllable_index.get(&syllable) {
            Some(&idx) => idx,
            None => {
                let idx = self.syllable_table.len();
                self.syllable_table.push(syllable.clone());
                self.syllable_index.insert(syllable, idx);
                idx
            }
        };
        self.entries.insert(character, syl_idx);
        Ok(())
    }

    /// Total number of classes: syllables plus silence plus blank.
    pub fn class_count(&self) -> usize {
        self.syllable_table.len() + 2
    }

    pub fn syllable_count(&self) -> usize {
        self.syllable_table.len()
    }

    /// Reserved class for non-singing frames.
    pub fn silence_id(&self) -> SyllableId {
        SyllableId(self.syllable_table.len())
    }

    /// Reserved CTC blank; never produced by lexicon lookup and never a
    /// framewise target.
    pub fn blank_id(&self) -> SyllableId {
        SyllableId(self.syllable_table.len() + 1)
    }

    /// Class of a single character.
    pub fn syllable_id(&self, character: char) -> Result<SyllableId, CodecError> {
        self.entries
            .get(&character)
            .map(|&idx| SyllableId(idx))
            .ok_or(CodecError::UnmappedCharacter {
                character,
                position: 0,
            })
    }

    /// Syllable string of a single character.
    pub fn syllable_str(&self, character: char) -> Result<&str, CodecError> {
        let id = self.syllable_id(character)?;
        Ok(self.syllable_table[id.index()].as_str())
    }

    /// Syllable string behind a class id; `None` for silence, blank, or
    /// out-of-range ids.
    pub fn syllable_of_id(&self, id: SyllableId) -> Option<&str> {
        self.syllable_table.get(id.index()).map(String::as_str)
    }

    /// Class id of a syllable string, if any character maps to it.
    pub fn id_of_syllable(&self, syllable: &str) -> Option<SyllableId> {
        self.syllable_index.get(syllable).copied().map(SyllableId)
    }

    /// Maps lyrics to their syllable classes, position by position.
    /// The result never contains the silence or blank id.
    pub fn chars_to_syllables(&self, lyrics: &LyricsSequence) -> Result<Vec<SyllableId>, CodecError> {
        lyrics
            .chars()
            .iter()
            .enumerate()
            .map(|(position, &character)| {
                self.entries
                    .get(&character)
                    .map(|&idx| SyllableId(idx))
                    .ok_or(CodecError::UnmappedCharacter {
                        character,
                        position,
                    })
            })
            .collect()
    }

    /// True iff both characters map to the identical syllable string
    /// (the pronunciation criterion used by PCAS-pronoun).
    pub fn syllables_equal(&self, a: char, b: char) -> Result<bool, CodecError> {
        Ok(self.syllable_id(a)? == self.syllable_id(b)?)
    }

    pub fn contains(&self, character: char) -> bool {
        self.entries.contains_key(&character)
    }

    /// Characters in the lexicon (no particular order).
    pub fn characters(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_line() -> Lexicon {
        Lexicon::parse("你\tni3\n好\thao3\n").unwrap()
    }

    #[test]
    fn two_entry_lexicon_has_four_classes() {
        let lex = two_line();
        assert_eq!(lex.class_count(), 4);
        assert_eq!(lex.silence_id(), SyllableId(2));
        assert_eq!(lex.blank_id(), SyllableId(3));
    }

    #[test]
    fn four_hundred_one_syllables_gives_403_classes() {
        // Synthetic inventory the size of the full toned-pinyin class space.
        let pairs: Vec<(char, String)> = (0..401u32)
            .map(|i| {
                let ch = char::from_u32(0x4E00 + i).unwrap();
                (ch, format!("syl{i}"))
            })
            .collect();
        let lex = Lexicon::from_pairs(pairs).unwrap();
        assert_eq!(lex.syllable_count(), 401);
        assert_eq!(lex.class_count(), 403);
    }

    #[test]
    fn idempotent_duplicate_accepted() {
        let lex = Lexicon::parse("你\tni3\n你\tni3\n").unwrap();
        assert_eq!(lex.syllable_count(), 1);
        assert_eq!(lex.syllable_id('你').unwrap(), SyllableId(0));
    }

    #[test]
    fn conflicting_duplicate_names_character() {
        let err = Lexicon::parse("你\tni3\n你\tni4\n").unwrap_err();
        match err {
            CodecError::ConflictingEntry { character, .. } => assert_eq!(character, '你'),
            other => panic!("expected ConflictingEntry, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = Lexicon::parse("你\tni3\nbroken line\n").unwrap_err();
        match err {
            CodecError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedLine, got {other}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let lex = Lexicon::parse("# header\n\n你\tni3\n").unwrap();
        assert_eq!(lex.syllable_count(), 1);
    }

    #[test]
    fn shared_syllable_gets_one_class() {
        let lex = Lexicon::parse("是\tshi4\n事\tshi4\n").unwrap();
        assert_eq!(lex.syllable_count(), 1);
        assert!(lex.syllables_equal('是', '事').unwrap());
    }

    #[test]
    fn chars_to_syllables_basic() {
        let lex = two_line();
        let ids = lex
            .chars_to_syllables(&LyricsSequence::from_text("你好"))
            .unwrap();
        assert_eq!(
            ids,
            vec![
                lex.syllable_id('你').unwrap(),
                lex.syllable_id('好').unwrap()
            ]
        );
    }

    #[test]
    fn chars_to_syllables_empty() {
        let lex = two_line();
        assert!(lex
            .chars_to_syllables(&LyricsSequence::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unmapped_character_reports_position() {
        let lex = two_line();
        let err = lex
            .chars_to_syllables(&LyricsSequence::from_text("你X"))
            .unwrap_err();
        match err {
            CodecError::UnmappedCharacter {
                character,
                position,
            } => {
                assert_eq!(character, 'X');
                assert_eq!(position, 1);
            }
            other => panic!("expected UnmappedCharacter, got {other}"),
        }
    }

    #[test]
    fn syllables_equal_cases() {
        let lex = two_line();
        assert!(lex.syllables_equal('你', '你').unwrap());
        assert!(!lex.syllables_equal('你', '好').unwrap());
        assert!(lex.syllables_equal('你', 'Z').is_err());
    }

    #[test]
    fn lookup_never_yields_reserved_ids() {
        let lex = two_line();
        for ch in ['你', '好'] {
            let id = lex.syllable_id(ch).unwrap();
            assert_ne!(id, lex.silence_id());
            assert_ne!(id, lex.blank_id());
        }
    }

    #[test]
    fn line_order_permutation_preserves_syllable_strings() {
        let a = Lexicon::parse("你\tni3\n好\thao3\n是\tshi4\n").unwrap();
        let b = Lexicon::parse("是\tshi4\n好\thao3\n你\tni3\n").unwrap();
        let lyrics = LyricsSequence::from_text("你好是");
        let strings = |lex: &Lexicon| -> Vec<String> {
            lex.chars_to_syllables(&lyrics)
                .unwrap()
                .into_iter()
                .map(|id| lex.syllable_of_id(id).unwrap().to_string())
                .collect()
        };
        assert_eq!(strings(&a), strings(&b));
        // Ids themselves renumber with first-appearance order.
        assert_ne!(
            a.syllable_id('你').unwrap(),
            b.syllable_id('你').unwrap()
        );
    }

    #[test]
    fn from_text_strips_whitespace() {
        let lyrics = LyricsSequence::from_text("你 好\n你");
        assert_eq!(lyrics.chars(), &['你', '好', '你']);
    }
}
