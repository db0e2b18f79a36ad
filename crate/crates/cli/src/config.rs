//! Pipeline configuration file.
//!
//! Every section is optional and falls back to library defaults:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "vocabulary": "vocab.txt",
//!   "lexicon": "lexicon.dict",
//!   "synth": { "keywords": ["stop", "go"], "prototype_seed": 1, "frames_per_phoneme": [6, 12],
//!              "noise_stddev": 0.5, "utterances_per_keyword": 50, "seed": 2 },
//!   "encoder": { "layers": 2, "dim": 64 },
//!   "features": { "n_channels": 80 },
//!   "train_ctc": { "epochs": 3, "warmup_steps": 200 },
//!   "fine_tune": { "epochs": 1 },
//!   "ced": { "epochs": 20, "lr": 0.001, "hidden": 64 },
//!   "eval": { "per_anchor": 11, "boundary": 3, "confusable_fallback": true }
//! }
//! ```
//!
//! A top-level `seed` replaces the seed of every stage.

use std::path::{Path, PathBuf};

use ced_core::encoder::{EncoderConfig, FeatureConfig, FineTuneConfig, TrainCtcConfig};
use ced_core::features::SyntheticCorpusSpec;
use ced_core::training::CedTrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub per_anchor: usize,
    pub boundary: usize,
    pub confusable_fallback: bool,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            per_anchor: 11,
            boundary: 3,
            confusable_fallback: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub vocabulary: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub synth: Option<SyntheticCorpusSpec>,
    pub encoder: EncoderConfig,
    pub features: FeatureConfig,
    pub train_ctc: TrainCtcConfig,
    pub fine_tune: FineTuneConfig,
    pub ced: CedTrainConfig,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut config: Self = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        config.apply_seed();
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.vocabulary, &mut config.lexicon]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            if let Some(s) = &mut self.synth {
                s.seed = seed;
            }
            self.train_ctc.seed = seed;
            self.fine_tune.seed = seed;
            self.ced.seed = seed;
            self.eval.seed = seed;
        }
    }
}
