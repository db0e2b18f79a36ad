//! Encoder weights plus a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, FeatureConfig};
use super::model::Conformer;
use crate::error::{CedError, Result};
use crate::nn::ParamStore;
use crate::phonemes::PhonemeVocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMetadata {
    pub version: u32,
    pub encoder_config: EncoderConfig,
    pub vocab_hash: String,
    pub feature_config: FeatureConfig,
    pub subsampling_factor: usize,
    pub param_count: usize,
    pub train_manifest_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EncoderCheckpoint {
    pub meta: EncoderMetadata,
    pub params: ParamStore,
}

/// `encoder.ckpt` → `encoder.meta.json`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("meta.json")
}

impl EncoderCheckpoint {
    pub fn new(
        encoder_config: EncoderConfig,
        feature_config: FeatureConfig,
        vocab: &PhonemeVocabulary,
        params: ParamStore,
        train_manifest_hash: String,
    ) -> Result<Self> {
        Conformer::from_store(&encoder_config, &params)?;
        Ok(Self {
            meta: EncoderMetadata {
                version: CHECKPOINT_VERSION,
                subsampling_factor: encoder_config.subsampling_factor,
                param_count: params.num_scalars(),
                encoder_config,
                vocab_hash: vocab.hash(),
                feature_config,
                train_manifest_hash,
                peak_lr: None,
                seed: None,
            },
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.meta.encoder_config
    }

    /// Hash of the weight bytes.
    pub fn weights_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn check_vocab(&self, vocab: &PhonemeVocabulary) -> Result<()> {
        if self.meta.vocab_hash != vocab.hash() {
            return Err(CedError::IncompatibleCheckpoint(
                "checkpoint was trained with a different phoneme vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, weights: &Path) -> Result<()> {
        self.params.save(weights)?;
        let meta_path = sidecar_path(weights);
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| CedError::json("encoder metadata", e))?;
        std::fs::write(&meta_path, json).map_err(|e| CedError::io(&meta_path, e))
    }

    pub fn load(weights: &Path) -> Result<Self> {
        let meta_path = sidecar_path(weights);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| CedError::io(&meta_path, e))?;
        let meta: EncoderMetadata = serde_json::from_str(&text)
            .map_err(|e| CedError::json(meta_path.display().to_string(), e))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(CedError::IncompatibleCheckpoint(format!(
                "unsupported checkpoint version {}",
                meta.version
            )));
        }
        if meta.subsampling_factor != meta.encoder_config.subsampling_factor {
            return Err(CedError::IncompatibleCheckpoint(
                "subsampling_factor disagrees with encoder_config".into(),
            ));
        }
        let params = ParamStore::load(weights)?;
        Conformer::from_store(&meta.encoder_config, &params)?;
        Ok(Self { meta, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            dim: 8,
            attention_heads: 2,
            input_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, params) = Conformer::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let vocab = PhonemeVocabulary::arpabet();
        let ckpt =
            EncoderCheckpoint::new(tiny(), FeatureConfig::default(), &vocab, params, "m".into())
                .unwrap();
        let path = dir.path().join("encoder.ckpt");
        ckpt.save(&path).unwrap();
        assert!(dir.path().join("encoder.meta.json").exists());
        let back = EncoderCheckpoint::load(&path).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.params.to_bytes(), ckpt.params.to_bytes());
        assert_eq!(back.weights_hash(), ckpt.weights_hash());
    }

    #[test]
    fn mismatched_layout_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let (_, params) = Conformer::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let vocab = PhonemeVocabulary::arpabet();
        let mut ckpt =
            EncoderCheckpoint::new(tiny(), FeatureConfig::default(), &vocab, params, "m".into())
                .unwrap();
        ckpt.meta.encoder_config.dim = 16;
        ckpt.meta.encoder_config.attention_heads = 4;
        let path = dir.path().join("encoder.ckpt");
        ckpt.save(&path).unwrap();
        assert!(matches!(
            EncoderCheckpoint::load(&path),
            Err(CedError::IncompatibleCheckpoint(_))
        ));
    }
}
