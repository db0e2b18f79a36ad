use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::hashing::sha256_hex;

/// Number of symbols in the phoneme inventory (blank excluded).
pub const VOCAB_SIZE: usize = 74;

/// Number of output classes of the acoustic model: the inventory plus the CTC blank.
pub const NUM_CLASSES: usize = VOCAB_SIZE + 1;

/// Index of the CTC blank, one past the last vocabulary symbol.
pub const BLANK_ID: usize = VOCAB_SIZE;

const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<space>"];

const CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T",
    "TH", "V", "W", "Y", "Z", "ZH",
];

const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

/// Index into a [`PhonemeVocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhonemeId(pub u16);

impl PhonemeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PhonemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered phoneme inventory: 5 special tokens followed by 69 stressed ARPAbet symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeVocabulary {
    symbols: Vec<String>,
    index: HashMap<String, PhonemeId>,
    stress_groups: BTreeMap<String, Vec<PhonemeId>>,
}

impl PhonemeVocabulary {
    /// The default inventory.
    pub fn arpabet() -> Self {
        let mut symbols: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        symbols.extend(CONSONANTS.iter().map(|s| s.to_string()));
        for vowel in VOWELS {
            for stress in 0..3 {
                symbols.push(format!("{vowel}{stress}"));
            }
        }
        Self::from_symbols(symbols).expect("built-in inventory is valid")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != VOCAB_SIZE {
            return Err(CedError::InvalidInput(format!(
                "vocabulary must hold exactly {VOCAB_SIZE} symbols, got {}",
                symbols.len()
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(CedError::InvalidInput(format!(
                    "malformed vocabulary symbol {s:?}"
                )));
            }
            if index.insert(s.clone(), PhonemeId(i as u16)).is_some() {
                return Err(CedError::InvalidInput(format!(
                    "duplicate vocabulary symbol {s}"
                )));
            }
        }
        let mut stress_groups: BTreeMap<String, Vec<PhonemeId>> = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if let Some(base) = stress_base(s) {
                stress_groups
                    .entry(base.to_string())
                    .or_default()
                    .push(PhonemeId(i as u16));
            }
        }
        Ok(Self {
            symbols,
            index,
            stress_groups,
        })
    }

    /// Parses a vocabulary file: one symbol per line, line order is index order.
    pub fn parse(text: &str) -> Result<Self> {
        let symbols = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_symbols(symbols)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = self.symbols.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn blank_id(&self) -> usize {
        BLANK_ID
    }

    pub fn stress_groups(&self) -> &BTreeMap<String, Vec<PhonemeId>> {
        &self.stress_groups
    }

    pub fn id(&self, symbol: &str) -> Option<PhonemeId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: PhonemeId) -> &str {
        &self.symbols[id.index()]
    }

    /// Special tokens (`<...>`) never appear in pronunciations.
    pub fn is_pronounceable(&self, id: PhonemeId) -> bool {
        self.symbols
            .get(id.index())
            .is_some_and(|s| !s.starts_with('<'))
    }

    /// All ids that may appear in a pronunciation, in index order.
    pub fn pronounceable(&self) -> Vec<PhonemeId> {
        (0..self.symbols.len() as u16)
            .map(PhonemeId)
            .filter(|&id| self.is_pronounceable(id))
            .collect()
    }

    /// Content hash tying checkpoints and databases to this exact inventory.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_file_contents().as_bytes())
    }

    pub fn parse_symbols<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<PhonemeId>> {
        symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                self.id(s)
                    .filter(|&id| self.is_pronounceable(id))
                    .ok_or_else(|| CedError::InvalidInput(format!("unknown phoneme symbol {s:?}")))
            })
            .collect()
    }

    pub fn render(&self, ids: &[PhonemeId]) -> Vec<String> {
        ids.iter().map(|&id| self.symbol(id).to_string()).collect()
    }
}

impl Default for PhonemeVocabulary {
    fn default() -> Self {
        Self::arpabet()
    }
}

fn stress_base(symbol: &str) -> Option<&str> {
    let last = symbol.chars().last()?;
    if symbol.len() > 1 && last.is_ascii_digit() {
        Some(&symbol[..symbol.len() - 1])
    } else {
        None
    }
}
