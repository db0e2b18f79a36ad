use rayon::prelude::*;

use crate::encoder::{AudioEmbedding, AudioEncoder};
use crate::error::{CedError, Result};
use crate::features::Manifest;
use crate::phonemes::{PhonemeSequence, PhonemeVocabulary};

/// An utterance with its frozen-encoder embedding.
#[derive(Debug, Clone)]
pub struct EmbeddedUtterance {
    pub id: String,
    pub transcript: String,
    pub phonemes: PhonemeSequence,
    pub embedding: AudioEmbedding,
}

/// All utterances of one transcript.
#[derive(Debug, Clone)]
pub struct KeywordEntry {
    pub text: String,
    pub phonemes: PhonemeSequence,
    /// Indices into [`Dataset::utterances`].
    pub utterances: Vec<usize>,
}

/// Utterances embedded once by a frozen encoder and grouped by keyword.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<EmbeddedUtterance>,
    /// In order of first appearance.
    pub keywords: Vec<KeywordEntry>,
    pub manifest_hash: String,
    /// Weights hash of the encoder that produced the embeddings.
    pub encoder_hash: String,
}

impl Dataset {
    pub fn embed(
        manifest: &Manifest,
        encoder: &AudioEncoder,
        vocab: &PhonemeVocabulary,
    ) -> Result<Self> {
        encoder.checkpoint().check_vocab(vocab)?;
        if manifest.is_empty() {
            return Err(CedError::InvalidInput("manifest is empty".into()));
        }
        let utterances: Vec<EmbeddedUtterance> = manifest
            .entries
            .par_iter()
            .map(|e| {
                Ok(EmbeddedUtterance {
                    id: e.id.clone(),
                    transcript: e.transcript.clone(),
                    phonemes: e.phoneme_sequence(vocab)?,
                    embedding: encoder.encode(&manifest.load_features(e)?)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_utterances(
            utterances,
            manifest.content_hash()?,
            encoder.checkpoint().weights_hash(),
        ))
    }

    pub fn from_utterances(
        utterances: Vec<EmbeddedUtterance>,
        manifest_hash: String,
        encoder_hash: String,
    ) -> Self {
        let mut keywords: Vec<KeywordEntry> = Vec::new();
        for (i, u) in utterances.iter().enumerate() {
            match keywords.iter_mut().find(|k| k.text == u.transcript) {
                Some(k) => k.utterances.push(i),
                None => keywords.push(KeywordEntry {
                    text: u.transcript.clone(),
                    phonemes: u.phonemes.clone(),
                    utterances: vec![i],
                }),
            }
        }
        Self {
            utterances,
            keywords,
            manifest_hash,
            encoder_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use ndarray::Array2;

    /// Four keywords, `per_keyword` utterances each, with constant embeddings.
    pub(crate) fn toy_dataset(per_keyword: usize) -> (Dataset, PhonemeVocabulary) {
        let vocab = PhonemeVocabulary::arpabet();
        let words: [(&str, &[&str]); 4] = [
            ("stop", &["S", "T", "AA1", "P"]),
            ("top", &["T", "AA1", "P"]),
            ("banana", &["B", "AH0", "N", "AE1", "N", "AH0"]),
            ("kitchen", &["K", "IH1", "CH", "AH0", "N"]),
        ];
        let mut utterances = Vec::new();
        for (w, (text, symbols)) in words.iter().enumerate() {
            for i in 0..per_keyword {
                utterances.push(EmbeddedUtterance {
                    id: format!("{text}-{i}"),
                    transcript: text.to_string(),
                    phonemes: PhonemeSequence::from_symbols(&vocab, symbols).unwrap(),
                    embedding: AudioEmbedding::new(Array2::from_elem((8, 4), 1.0 + w as f64))
                        .unwrap(),
                });
            }
        }
        (
            Dataset::from_utterances(utterances, "m".into(), "e".into()),
            vocab,
        )
    }

    #[test]
    fn grouping_follows_first_appearance() {
        let (d, _) = toy_dataset(3);
        assert_eq!(d.len(), 12);
        let texts: Vec<&str> = d.keywords.iter().map(|k| k.text.as_str()).collect();
        assert_eq!(texts, ["stop", "top", "banana", "kitchen"]);
        assert_eq!(d.keywords[1].utterances, vec![3, 4, 5]);
    }
}
