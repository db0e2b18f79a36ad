//! Audio frontend, feature/manifest file formats and the synthetic corpus generator.

mod filterbank;
mod io;
mod synth;

use ndarray::Array2;

use crate::error::{CedError, Result};

pub use filterbank::{
    extract_filterbank, mel_filters, normalize_columns, FilterbankConfig, FilterbankExtractor,
};
pub use io::{
    decode_features, encode_features, load_audio_input, read_features, read_wav_features,
    write_features, Manifest, ManifestEntry, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{build_synthetic_corpus, synthesize_utterance, PrototypeBank, SyntheticCorpusSpec};

/// Frames per second of every feature matrix (10 ms hop).
pub const FRAME_RATE: usize = 100;

/// `frames × channels` acoustic features. Always non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f32>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CedError::InvalidInput(
                "feature matrix must be non-empty".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CedError::InvalidInput(
                "feature matrix has non-finite values".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }
}
