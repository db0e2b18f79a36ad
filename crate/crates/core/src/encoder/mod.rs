//! Conformer audio encoder: CTC training, fine-tuning, inference and greedy decoding.

mod checkpoint;
mod config;
mod ctc;
mod decode;
mod model;
mod train;

use ndarray::Array2;

use crate::error::{CedError, Result};
use crate::features::FeatureMatrix;
use crate::nn::{softmax_rows, Tape};

pub use checkpoint::{sidecar_path, EncoderCheckpoint, EncoderMetadata, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, FeatureConfig};
pub use ctc::{ctc_loss, min_frames};
pub use decode::{collapse_path, greedy_decode, DecodedSequence, PosteriorMatrix, Segment};
pub use model::{positional_encoding, Conformer, DropoutRng, EncoderOutput};
pub use train::{
    fine_tune, train_ctc, EpochReport, FineTuneConfig, TrainCtcConfig, TrainingReport, Utterance,
};

/// `n × d` frame embeddings on the subsampled time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding {
    vectors: Array2<f64>,
}

impl AudioEmbedding {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(CedError::InvalidInput("embedding must be non-empty".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CedError::InvalidInput(
                "embedding has non-finite values".into(),
            ));
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn num_frames(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// A loaded checkpoint ready for evaluation-mode inference. Shareable across threads.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    checkpoint: EncoderCheckpoint,
    model: Conformer,
}

impl AudioEncoder {
    pub fn new(checkpoint: EncoderCheckpoint) -> Result<Self> {
        let model = Conformer::from_store(checkpoint.config(), &checkpoint.params)?;
        Ok(Self { checkpoint, model })
    }

    pub fn checkpoint(&self) -> &EncoderCheckpoint {
        &self.checkpoint
    }

    pub fn config(&self) -> &EncoderConfig {
        self.checkpoint.config()
    }

    pub fn dim(&self) -> usize {
        self.config().dim
    }

    fn check_features(&self, features: &FeatureMatrix) -> Result<()> {
        let expected = self.checkpoint.meta.feature_config.n_channels;
        if features.num_channels() != expected {
            return Err(CedError::IncompatibleCheckpoint(format!(
                "checkpoint expects {expected}-channel features, got {}",
                features.num_channels()
            )));
        }
        Ok(())
    }

    /// Frame embeddings, `ceil(n' / subsampling_factor) × d`.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<AudioEmbedding> {
        Ok(self.encode_with_logits(features)?.0)
    }

    /// Embeddings and posteriors from one forward pass.
    pub fn encode_with_posteriors(
        &self,
        features: &FeatureMatrix,
    ) -> Result<(AudioEmbedding, PosteriorMatrix)> {
        let (emb, logits) = self.encode_with_logits(features)?;
        Ok((emb, PosteriorMatrix::new(softmax_rows(&logits))?))
    }

    fn encode_with_logits(
        &self,
        features: &FeatureMatrix,
    ) -> Result<(AudioEmbedding, Array2<f64>)> {
        self.check_features(features)?;
        let mut tape = Tape::new(&self.checkpoint.params);
        let out = self.model.forward(&mut tape, features.to_f64(), None)?;
        let emb = AudioEmbedding::new(tape.value(out.embedding).clone())?;
        Ok((emb, tape.value(out.logits).clone()))
    }

    /// Softmax over phonemes and blank for every frame of `embedding`.
    pub fn predict_posteriors(&self, embedding: &AudioEmbedding) -> Result<PosteriorMatrix> {
        if embedding.dim() != self.dim() {
            return Err(CedError::InvalidInput(format!(
                "embedding has dimension {}, encoder has {}",
                embedding.dim(),
                self.dim()
            )));
        }
        let mut tape = Tape::new(&self.checkpoint.params);
        let e = tape.input(embedding.vectors().clone());
        let logits = self.model.classify(&mut tape, e);
        PosteriorMatrix::new(softmax_rows(tape.value(logits)))
    }

    /// Greedy phoneme transcription together with the embedding it was read from.
    pub fn transcribe(
        &self,
        features: &FeatureMatrix,
    ) -> Result<(AudioEmbedding, DecodedSequence)> {
        let (emb, post) = self.encode_with_posteriors(features)?;
        Ok((emb, greedy_decode(&post)))
    }
}
