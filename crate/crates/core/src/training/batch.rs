use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::confusable::{generate_confusable, ConfusableSpec};
use super::dataset::Dataset;
use crate::error::{CedError, Result};
use crate::phonemes::{PhonemeId, PhonemeSequence};

/// An utterance paired with a phoneme text and a match label.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// Index into [`Dataset::utterances`].
    pub audio: usize,
    pub text: PhonemeSequence,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_keywords: usize,
    pub minibatch_size: usize,
    pub deltas: Vec<usize>,
    pub use_confusables: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_keywords: 32,
            minibatch_size: 11,
            deltas: vec![1, 2, 3],
            use_confusables: true,
        }
    }
}

/// The three mini-batches built for one keyword.
#[derive(Debug, Clone)]
pub struct KeywordGroup {
    /// Index into [`Dataset::keywords`].
    pub keyword: usize,
    pub positives: Vec<SamplePair>,
    pub random_negatives: Vec<SamplePair>,
    /// Positive audio paired with confusable texts; more random negatives when confusables are off.
    pub confusable_negatives: Vec<SamplePair>,
}

#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub groups: Vec<KeywordGroup>,
}

impl TrainingBatch {
    pub fn pairs(&self) -> impl Iterator<Item = &SamplePair> {
        self.groups.iter().flat_map(|g| {
            g.positives
                .iter()
                .chain(&g.random_negatives)
                .chain(&g.confusable_negatives)
        })
    }

    pub fn len(&self) -> usize {
        self.pairs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Draws a confusable for `keyword` with `delta` picked uniformly from `deltas`,
/// capped at the number of edit positions the keyword offers.
pub fn sample_confusable(
    keyword: &PhonemeSequence,
    deltas: &[usize],
    inventory: &[PhonemeId],
    rng: &mut impl Rng,
) -> Result<PhonemeSequence> {
    let delta = *deltas
        .choose(rng)
        .ok_or_else(|| CedError::InvalidInput("no edit distances configured".into()))?;
    let mut spec = ConfusableSpec::new(delta);
    spec.delta = delta.min(spec.positions(keyword.len()));
    Ok(generate_confusable(keyword, &spec, inventory, rng)?.sequence)
}

/// One batch: up to `batch_keywords` keywords without replacement, each with
/// positives, random negatives (its text on other keywords' audio) and confusables.
pub fn build_batch(
    dataset: &Dataset,
    config: &BatchConfig,
    inventory: &[PhonemeId],
    rng: &mut impl Rng,
) -> Result<TrainingBatch> {
    if dataset.keywords.is_empty() {
        return Err(CedError::InvalidInput("dataset has no keywords".into()));
    }
    let k = config.batch_keywords.min(dataset.keywords.len());
    if k < config.batch_keywords {
        log::warn!(
            "only {k} keywords available; batch shrinks from {}",
            config.batch_keywords
        );
    }
    let mut chosen: Vec<usize> = (0..dataset.keywords.len()).collect();
    chosen.shuffle(rng);
    chosen.truncate(k);
    let size = config.minibatch_size;
    let mut groups = Vec::with_capacity(k);
    for kw in chosen {
        let entry = &dataset.keywords[kw];
        let text = &entry.phonemes;
        let picks: Vec<usize> = if entry.utterances.len() >= size {
            entry
                .utterances
                .choose_multiple(rng, size)
                .copied()
                .collect()
        } else {
            (0..size)
                .map(|_| *entry.utterances.choose(rng).unwrap())
                .collect()
        };
        let positives: Vec<SamplePair> = picks
            .into_iter()
            .map(|audio| SamplePair {
                audio,
                text: text.clone(),
                label: true,
            })
            .collect();
        let foreign: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.utterances[i].phonemes != *text)
            .collect();
        if foreign.is_empty() {
            return Err(CedError::InvalidInput(format!(
                "no utterance of another keyword to pair with \"{}\"",
                entry.text
            )));
        }
        let negatives = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<SamplePair> {
            (0..n)
                .map(|_| SamplePair {
                    audio: *foreign.choose(rng).unwrap(),
                    text: text.clone(),
                    label: false,
                })
                .collect()
        };
        let random_negatives = negatives(size, rng);
        let confusable_negatives = if config.use_confusables {
            positives
                .iter()
                .map(|p| {
                    Ok(SamplePair {
                        audio: p.audio,
                        text: sample_confusable(text, &config.deltas, inventory, rng)?,
                        label: false,
                    })
                })
                .collect::<Result<_>>()?
        } else {
            negatives(size, rng)
        };
        groups.push(KeywordGroup {
            keyword: kw,
            positives,
            random_negatives,
            confusable_negatives,
        });
    }
    Ok(TrainingBatch { groups })
}

#[cfg(test)]
mod tests {
    use super::super::dataset::fixtures::toy_dataset;
    use super::*;
    use crate::phonemes::sequence_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_layout_and_labels() {
        let (d, vocab) = toy_dataset(20);
        let config = BatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = build_batch(&d, &config, &vocab.pronounceable(), &mut rng).unwrap();
        assert_eq!(batch.groups.len(), 4);
        assert_eq!(batch.len(), 4 * 33);
        for g in &batch.groups {
            let kw = &d.keywords[g.keyword];
            let mut seen = std::collections::HashSet::new();
            for p in &g.positives {
                assert!(
                    p.label && p.text == kw.phonemes && d.utterances[p.audio].transcript == kw.text
                );
                assert!(seen.insert(p.audio), "positives drawn without replacement");
            }
            for p in &g.random_negatives {
                assert!(!p.label && p.text == kw.phonemes);
                assert_ne!(d.utterances[p.audio].phonemes, kw.phonemes);
            }
            for p in &g.confusable_negatives {
                assert!(!p.label);
                assert_eq!(d.utterances[p.audio].transcript, kw.text);
                let dist = sequence_distance(&p.text, &kw.phonemes);
                assert!((1..=3).contains(&dist));
            }
        }
    }

    #[test]
    fn without_confusables_all_negatives_use_foreign_audio() {
        let (d, vocab) = toy_dataset(5);
        let config = BatchConfig {
            use_confusables: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = build_batch(&d, &config, &vocab.pronounceable(), &mut rng).unwrap();
        for g in &batch.groups {
            assert_eq!(g.positives.len(), 11);
            for p in &g.confusable_negatives {
                assert_eq!(p.text, d.keywords[g.keyword].phonemes);
                assert_ne!(d.utterances[p.audio].transcript, d.keywords[g.keyword].text);
            }
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let (d, vocab) = toy_dataset(12);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = build_batch(
                &d,
                &BatchConfig::default(),
                &vocab.pronounceable(),
                &mut rng,
            )
            .unwrap();
            b.pairs().cloned().collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn delta_is_capped_for_short_keywords() {
        let vocab = crate::phonemes::PhonemeVocabulary::arpabet();
        let kw = PhonemeSequence::from_symbols(&vocab, &["AA1"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let c = sample_confusable(&kw, &[3], &vocab.pronounceable(), &mut rng).unwrap();
            assert!((1..=2).contains(&sequence_distance(&c, &kw)));
        }
    }
}
