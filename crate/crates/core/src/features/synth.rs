//! Synthetic phoneme "audio": each phoneme is a fixed random prototype frame,
//! repeated for a random duration and blurred with Gaussian noise. It gives the
//! acoustic model a learnable, fully controlled task at desk scale.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{write_features, Manifest, ManifestEntry};
use super::FeatureMatrix;
use crate::error::{CedError, Result};
use crate::phonemes::{
    grapheme_to_phoneme, Lexicon, PhonemeId, PhonemeSequence, PhonemeVocabulary, VOCAB_SIZE,
};

fn default_channels() -> usize {
    80
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    /// Transcripts to render; each is resolved through the lexicon.
    pub keywords: Vec<String>,
    pub prototype_seed: u64,
    /// Inclusive `[lo, hi]` range of frames per phoneme.
    pub frames_per_phoneme: [usize; 2],
    pub noise_stddev: f64,
    pub utterances_per_keyword: usize,
    /// Seed for durations and noise.
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub n_channels: usize,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.frames_per_phoneme;
        if lo < 1 || hi < lo {
            return Err(CedError::InvalidInput(format!(
                "frames_per_phoneme must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(CedError::InvalidInput("noise_stddev must be >= 0".into()));
        }
        if self.n_channels == 0 {
            return Err(CedError::InvalidInput("n_channels must be positive".into()));
        }
        Ok(())
    }
}

/// One fixed random frame per vocabulary symbol, a pure function of the seed.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    prototypes: Array2<f32>,
}

impl PrototypeBank {
    pub fn new(seed: u64, n_channels: usize) -> Self {
        let mut prototypes = Array2::zeros((VOCAB_SIZE, n_channels));
        for (id, mut row) in prototypes.rows_mut().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64 + 1);
            for v in row.iter_mut() {
                *v = Distribution::<f32>::sample(&StandardNormal, &mut rng);
            }
        }
        Self { prototypes }
    }

    pub fn prototype(&self, id: PhonemeId) -> Array1<f32> {
        self.prototypes.row(id.index()).to_owned()
    }
}

/// Renders one utterance: per phoneme, `uniform[lo, hi]` copies of its prototype plus noise.
pub fn synthesize_utterance(
    phonemes: &[PhonemeId],
    spec: &SyntheticCorpusSpec,
    bank: &PrototypeBank,
    rng: &mut impl Rng,
) -> Result<FeatureMatrix> {
    if phonemes.is_empty() {
        return Err(CedError::InvalidInput(
            "cannot synthesize an empty phoneme sequence".into(),
        ));
    }
    spec.validate()?;
    let [lo, hi] = spec.frames_per_phoneme;
    let durations: Vec<usize> = phonemes.iter().map(|_| rng.random_range(lo..=hi)).collect();
    let total: usize = durations.iter().sum();
    let mut data = Array2::<f32>::zeros((total, spec.n_channels));
    let mut row = 0;
    for (&p, &dur) in phonemes.iter().zip(&durations) {
        let proto = bank.prototypes.row(p.index());
        for _ in 0..dur {
            let mut out = data.row_mut(row);
            for (dst, &base) in out.iter_mut().zip(proto.iter()) {
                let noise: f64 = if spec.noise_stddev > 0.0 {
                    spec.noise_stddev * Distribution::<f64>::sample(&StandardNormal, rng)
                } else {
                    0.0
                };
                *dst = base + noise as f32;
            }
            row += 1;
        }
    }
    FeatureMatrix::new(data)
}

fn slug(text: &str) -> String {
    let s: String = text
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    s.trim_matches('_').to_string()
}

/// Writes one feature file per utterance under `output_dir/feats/` and a JSONL manifest.
/// Returns the manifest path.
pub fn build_synthetic_corpus(
    spec: &SyntheticCorpusSpec,
    lexicon: &Lexicon,
    vocab: &PhonemeVocabulary,
    output_dir: &Path,
) -> Result<PathBuf> {
    spec.validate()?;
    let prons: Vec<(String, PhonemeSequence)> = spec
        .keywords
        .iter()
        .map(|k| Ok((k.clone(), grapheme_to_phoneme(k, lexicon, vocab)?)))
        .collect::<Result<_>>()?;
    let feats_dir = output_dir.join("feats");
    std::fs::create_dir_all(&feats_dir).map_err(|e| CedError::io(&feats_dir, e))?;
    let bank = PrototypeBank::new(spec.prototype_seed, spec.n_channels);

    let jobs: Vec<(usize, usize)> = (0..prons.len())
        .flat_map(|k| (0..spec.utterances_per_keyword).map(move |u| (k, u)))
        .collect();
    let rendered: Vec<(ManifestEntry, FeatureMatrix)> = jobs
        .par_iter()
        .enumerate()
        .map(|(global, &(k, u))| {
            let (text, pron) = &prons[k];
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(global as u64);
            let feats = synthesize_utterance(pron.tokens(), spec, &bank, &mut rng)?;
            let id = format!("{}-{u:04}", slug(text));
            let entry = ManifestEntry {
                features_path: Some(format!("feats/{id}.feat")),
                audio_path: None,
                transcript: text.clone(),
                phonemes: vocab.render(pron.tokens()),
                duration_frames: feats.num_frames(),
                id,
            };
            Ok((entry, feats))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(rendered.len());
    for (entry, feats) in rendered {
        write_features(
            &output_dir.join(entry.features_path.as_deref().unwrap()),
            &feats,
        )?;
        entries.push(entry);
    }
    let manifest_path = output_dir.join("manifest.jsonl");
    Manifest {
        entries,
        base_dir: output_dir.to_path_buf(),
    }
    .write(&manifest_path)?;
    Ok(manifest_path)
}
