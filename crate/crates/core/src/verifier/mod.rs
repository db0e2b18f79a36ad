//! Audio-text verification: cosine matrix, monotone alignment, path masking and
//! a recurrent scoring head.

mod align;
mod bundle;
mod head;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::AudioEmbedding;
use crate::error::{CedError, Result};
use crate::features::FeatureMatrix;
use crate::p2v::{encode_phonemes, TextEmbedding};
use crate::phonemes::{grapheme_to_phoneme, Lexicon, PhonemeSequence};

pub use align::{cosine_matrix, dsp_align, masked_agreement, AlignmentPath};
pub use bundle::{
    Bundle, BundleManifest, VerifierCheckpoint, VerifierMetadata, BUNDLE_FILE, BUNDLE_VERSION,
    ENCODER_FILE, P2V_FILE, VERIFIER_FILE, VERIFIER_VERSION,
};
pub use head::{HeadConfig, VerifierHead};

/// `m × d` agreement matrix of a text embedding against an audio embedding.
pub fn agreement_matrix(text: &TextEmbedding, audio: &AudioEmbedding) -> Result<Array2<f64>> {
    let values = cosine_matrix(&text.rows, audio.vectors())?;
    let path = dsp_align(&values)?;
    masked_agreement(&values, &path, audio.vectors())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Match probability; 0 when the audio is too short to align.
    pub score: f64,
    /// Set when the text has more phonemes than the audio has frames.
    pub infeasible: bool,
}

impl Bundle {
    /// Scores precomputed audio against a phoneme sequence.
    pub fn score_embedding(
        &self,
        audio: &AudioEmbedding,
        phonemes: &PhonemeSequence,
    ) -> Result<Verification> {
        let text = encode_phonemes(phonemes, &self.p2v, &self.vocab)?;
        match agreement_matrix(&text, audio) {
            Ok(a) => Ok(Verification {
                score: self.head.score(&self.head_params, &a)?,
                infeasible: false,
            }),
            Err(CedError::AlignmentInfeasible { frames, phonemes }) => {
                log::debug!(
                    "{phonemes} phonemes cannot align to {frames} frames; scoring as non-match"
                );
                Ok(Verification {
                    score: 0.0,
                    infeasible: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn verify_phonemes(
        &self,
        features: &FeatureMatrix,
        phonemes: &PhonemeSequence,
    ) -> Result<Verification> {
        let audio = self.encoder.encode(features)?;
        self.score_embedding(&audio, phonemes)
    }
}

/// Match probability of `features` against keyword `text`.
pub fn verify(
    features: &FeatureMatrix,
    text: &str,
    lexicon: &Lexicon,
    bundle: &Bundle,
) -> Result<Verification> {
    let phonemes = grapheme_to_phoneme(text, lexicon, &bundle.vocab)?;
    bundle.verify_phonemes(features, &phonemes)
}
