use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sequence::PhonemeSequence;
use super::vocab::PhonemeVocabulary;
use crate::error::{CedError, Result};

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    #[default]
    Error,
    /// Letter-by-letter respelling for words missing from the lexicon.
    SpellingFallback,
}

/// Pronouncing dictionary used for grapheme-to-phoneme lookup.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<String, Vec<PhonemeSequence>>,
    oov_policy: OovPolicy,
}

impl Lexicon {
    /// The lexicon shipped with the crate.
    pub fn bundled(vocab: &PhonemeVocabulary) -> Self {
        Self::parse(BUNDLED_LEXICON, vocab).expect("bundled lexicon is valid")
    }

    /// Parses `WORD PH1 PH2 ...` lines. `#` lines are comments; a repeated word adds an
    /// alternate pronunciation. CMU-style `WORD(1)` alternate markers are accepted.
    pub fn parse(text: &str, vocab: &PhonemeVocabulary) -> Result<Self> {
        let mut entries: HashMap<String, Vec<PhonemeSequence>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let word = strip_alternate_marker(word).to_lowercase();
            let symbols: Vec<&str> = fields.collect();
            let pron = PhonemeSequence::from_symbols(vocab, &symbols)
                .map_err(|e| CedError::InvalidInput(format!("lexicon line {}: {e}", lineno + 1)))?;
            entries.entry(word).or_default().push(pron);
        }
        Ok(Self {
            entries,
            oov_policy: OovPolicy::Error,
        })
    }

    pub fn load(path: &Path, vocab: &PhonemeVocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedError::io(path, e))?;
        Self::parse(&text, vocab)
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[PhonemeSequence]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    /// Pronunciation of a single normalized word: first listed entry wins.
    fn lookup(&self, word: &str, vocab: &PhonemeVocabulary) -> Result<PhonemeSequence> {
        if let Some(prons) = self.entries.get(word) {
            return Ok(prons[0].clone());
        }
        match self.oov_policy {
            OovPolicy::Error => Err(CedError::OutOfVocabulary {
                word: word.to_string(),
            }),
            OovPolicy::SpellingFallback => spell_out(word, vocab),
        }
    }
}

fn strip_alternate_marker(word: &str) -> &str {
    match word.find('(') {
        Some(i) if word.ends_with(')') => &word[..i],
        _ => word,
    }
}

/// Lowercases, splits on whitespace and trims surrounding punctuation.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Converts a word sequence to phonemes by concatenating per-word pronunciations.
pub fn grapheme_to_phoneme(
    text: &str,
    lexicon: &Lexicon,
    vocab: &PhonemeVocabulary,
) -> Result<PhonemeSequence> {
    let words = normalize_words(text);
    if words.is_empty() {
        return Err(CedError::InvalidInput("empty text".into()));
    }
    let mut tokens = Vec::new();
    for word in &words {
        tokens.extend_from_slice(lexicon.lookup(word, vocab)?.tokens());
    }
    PhonemeSequence::new(tokens)
}

fn letter_sound(c: char) -> &'static [&'static str] {
    match c {
        'a' => &["AE1"],
        'b' => &["B"],
        'c' | 'k' | 'q' => &["K"],
        'd' => &["D"],
        'e' => &["EH1"],
        'f' => &["F"],
        'g' => &["G"],
        'h' => &["HH"],
        'i' => &["IH1"],
        'j' => &["JH"],
        'l' => &["L"],
        'm' => &["M"],
        'n' => &["N"],
        'o' => &["AA1"],
        'p' => &["P"],
        'r' => &["R"],
        's' => &["S"],
        't' => &["T"],
        'u' => &["AH1"],
        'v' => &["V"],
        'w' => &["W"],
        'x' => &["K", "S"],
        'y' => &["Y"],
        'z' => &["Z"],
        _ => &[],
    }
}

fn spell_out(word: &str, vocab: &PhonemeVocabulary) -> Result<PhonemeSequence> {
    let mut symbols: Vec<&str> = Vec::new();
    let mut prev: Option<char> = None;
    for c in word.chars() {
        // doubled letters ("ll", "ss") make one sound
        if prev != Some(c) {
            symbols.extend_from_slice(letter_sound(c));
        }
        prev = Some(c);
    }
    if symbols.is_empty() {
        return Err(CedError::OutOfVocabulary {
            word: word.to_string(),
        });
    }
    PhonemeSequence::from_symbols(vocab, &symbols)
}
