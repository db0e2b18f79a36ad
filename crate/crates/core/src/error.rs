use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CedError>;

#[derive(Debug, Error)]
pub enum CedError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("word not in lexicon: {word}")]
    OutOfVocabulary { word: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("incompatible bundle: {0}")]
    IncompatibleBundle(String),

    #[error("alignment infeasible: {frames} frames cannot cover {phonemes} phonemes")]
    AlignmentInfeasible { frames: usize, phonemes: usize },

    #[error("phoneme coverage missing for: {}", missing.join(" "))]
    Coverage { missing: Vec<String> },

    #[error("confusable generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        CedError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors that come from mismatched or malformed artifacts rather than bad usage.
    pub fn is_compatibility(&self) -> bool {
        matches!(
            self,
            CedError::IncompatibleBundle(_) | CedError::IncompatibleCheckpoint(_)
        )
    }
}
