use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::hashing::sha256_hex;
use crate::phonemes::{PhonemeId, PhonemeVocabulary, VOCAB_SIZE};

pub const P2V_VERSION: u32 = 1;

/// Where a database came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2VSource {
    pub checkpoint_hash: String,
    pub manifest_hash: String,
    pub sample_cap: usize,
    pub seed: u64,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PhonemeEntry {
    count: usize,
    vector: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct P2VFile {
    version: u32,
    dim: usize,
    source: P2VSource,
    phonemes: BTreeMap<String, PhonemeEntry>,
}

/// Phoneme-to-vector table: one global vector per phoneme seen in training audio.
#[derive(Debug, Clone, PartialEq)]
pub struct P2VDatabase {
    dim: usize,
    vectors: Vec<Option<Array1<f64>>>,
    counts: Vec<usize>,
    source: P2VSource,
}

impl P2VDatabase {
    /// Builds a database from per-phoneme `(vector, count)` pairs. Counts must be positive.
    pub fn new(
        dim: usize,
        entries: impl IntoIterator<Item = (PhonemeId, Array1<f64>, usize)>,
        source: P2VSource,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CedError::InvalidInput(
                "P2V dimension must be positive".into(),
            ));
        }
        let mut vectors = vec![None; VOCAB_SIZE];
        let mut counts = vec![0; VOCAB_SIZE];
        for (p, v, count) in entries {
            if p.index() >= VOCAB_SIZE {
                return Err(CedError::InvalidInput(format!(
                    "phoneme id {p} out of range"
                )));
            }
            if v.len() != dim || count == 0 || v.iter().any(|x| !x.is_finite()) {
                return Err(CedError::InvalidInput(format!(
                    "phoneme {p}: vector must have {dim} finite components and count >= 1"
                )));
            }
            vectors[p.index()] = Some(v);
            counts[p.index()] = count;
        }
        Ok(Self {
            dim,
            vectors,
            counts,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &P2VSource {
        &self.source
    }

    pub fn vector(&self, p: PhonemeId) -> Option<&Array1<f64>> {
        self.vectors.get(p.index()).and_then(Option::as_ref)
    }

    pub fn count(&self, p: PhonemeId) -> usize {
        self.counts.get(p.index()).copied().unwrap_or(0)
    }

    /// Stored phonemes in id order.
    pub fn phonemes(&self) -> Vec<PhonemeId> {
        (0..VOCAB_SIZE)
            .filter(|&i| self.vectors[i].is_some())
            .map(|i| PhonemeId(i as u16))
            .collect()
    }

    /// `m × d` rows looked up in order. Missing phonemes yield a coverage error.
    pub fn lookup(&self, phonemes: &[PhonemeId], vocab: &PhonemeVocabulary) -> Result<Array2<f64>> {
        let missing: Vec<String> = phonemes
            .iter()
            .filter(|p| self.vector(**p).is_none())
            .map(|p| vocab.symbol(*p).to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CedError::Coverage { missing });
        }
        let mut out = Array2::zeros((phonemes.len(), self.dim));
        for (mut row, p) in out.rows_mut().into_iter().zip(phonemes) {
            row.assign(self.vector(*p).unwrap());
        }
        Ok(out)
    }

    pub fn to_json(&self, vocab: &PhonemeVocabulary) -> Result<String> {
        let phonemes = self
            .phonemes()
            .into_iter()
            .map(|p| {
                (
                    vocab.symbol(p).to_string(),
                    PhonemeEntry {
                        count: self.count(p),
                        vector: self.vector(p).unwrap().to_vec(),
                    },
                )
            })
            .collect();
        let file = P2VFile {
            version: P2V_VERSION,
            dim: self.dim,
            source: self.source.clone(),
            phonemes,
        };
        serde_json::to_string_pretty(&file).map_err(|e| CedError::json("P2V database", e))
    }

    pub fn from_json(text: &str, vocab: &PhonemeVocabulary) -> Result<Self> {
        let file: P2VFile =
            serde_json::from_str(text).map_err(|e| CedError::json("P2V database", e))?;
        if file.version != P2V_VERSION {
            return Err(CedError::IncompatibleBundle(format!(
                "unsupported P2V version {}",
                file.version
            )));
        }
        let entries = file
            .phonemes
            .into_iter()
            .map(|(sym, e)| {
                let id = vocab.id(&sym).ok_or_else(|| {
                    CedError::IncompatibleBundle(format!(
                        "P2V symbol {sym} is not in the vocabulary"
                    ))
                })?;
                Ok((id, Array1::from(e.vector), e.count))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.dim, entries, file.source)
    }

    pub fn save(&self, path: &Path, vocab: &PhonemeVocabulary) -> Result<()> {
        std::fs::write(path, self.to_json(vocab)?).map_err(|e| CedError::io(path, e))
    }

    pub fn load(path: &Path, vocab: &PhonemeVocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedError::io(path, e))?;
        Self::from_json(&text, vocab)
    }

    pub fn content_hash(&self, vocab: &PhonemeVocabulary) -> Result<String> {
        Ok(sha256_hex(self.to_json(vocab)?.as_bytes()))
    }
}
