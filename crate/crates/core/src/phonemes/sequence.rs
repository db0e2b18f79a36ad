use serde::{Deserialize, Serialize};

use super::vocab::{PhonemeId, PhonemeVocabulary, VOCAB_SIZE};
use crate::error::{CedError, Result};

/// A non-empty pronunciation: ordered phoneme ids, never the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<PhonemeId>", into = "Vec<PhonemeId>")]
pub struct PhonemeSequence(Vec<PhonemeId>);

impl PhonemeSequence {
    pub fn new(tokens: Vec<PhonemeId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CedError::InvalidInput("empty phoneme sequence".into()));
        }
        if let Some(bad) = tokens.iter().find(|t| t.index() >= VOCAB_SIZE) {
            return Err(CedError::InvalidInput(format!(
                "phoneme id {} is outside the vocabulary",
                bad.0
            )));
        }
        Ok(Self(tokens))
    }

    pub fn from_symbols<S: AsRef<str>>(vocab: &PhonemeVocabulary, symbols: &[S]) -> Result<Self> {
        Self::new(vocab.parse_symbols(symbols)?)
    }

    pub fn tokens(&self) -> &[PhonemeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &PhonemeSequence) -> PhonemeSequence {
        let mut tokens = self.0.clone();
        tokens.extend_from_slice(&other.0);
        PhonemeSequence(tokens)
    }

    pub fn render(&self, vocab: &PhonemeVocabulary) -> String {
        vocab.render(&self.0).join(" ")
    }
}

impl TryFrom<Vec<PhonemeId>> for PhonemeSequence {
    type Error = CedError;

    fn try_from(tokens: Vec<PhonemeId>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<PhonemeSequence> for Vec<PhonemeId> {
    fn from(seq: PhonemeSequence) -> Self {
        seq.0
    }
}

impl AsRef<[PhonemeId]> for PhonemeSequence {
    fn as_ref(&self) -> &[PhonemeId] {
        &self.0
    }
}
