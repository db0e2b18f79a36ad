//! Confusable keyword generation, keyword-grouped batching and verifier training
//! on top of a frozen encoder.

mod batch;
mod confusable;
mod dataset;

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderCheckpoint;
use crate::error::{CedError, Result};
use crate::eval::{auc, build_test_pairs, PairMode, TestPairConfig};
use crate::nn::{Adam, AdamConfig, Gradients, ParamStore};
use crate::p2v::{encode_phonemes, P2VDatabase};
use crate::phonemes::{PhonemeId, PhonemeVocabulary};
use crate::verifier::{
    agreement_matrix, HeadConfig, VerifierCheckpoint, VerifierHead, VerifierMetadata,
    VERIFIER_VERSION,
};

pub use batch::{
    build_batch, sample_confusable, BatchConfig, KeywordGroup, SamplePair, TrainingBatch,
};
pub use confusable::{
    apply_edits, generate_confusable, neighbours, Confusable, ConfusableSpec, Edit, EditOp,
};
#[cfg(test)]
pub(crate) use dataset::fixtures;
pub use dataset::{Dataset, EmbeddedUtterance, KeywordEntry};

/// Agreement matrix of a pair, or `None` when the text has more phonemes than the audio has frames.
pub fn pair_agreement(
    pair: &SamplePair,
    dataset: &Dataset,
    p2v: &P2VDatabase,
    vocab: &PhonemeVocabulary,
) -> Result<Option<Array2<f64>>> {
    let text = encode_phonemes(&pair.text, p2v, vocab)?;
    match agreement_matrix(&text, &dataset.utterances[pair.audio].embedding) {
        Ok(a) => Ok(Some(a)),
        Err(CedError::AlignmentInfeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores pairs in parallel. Infeasible pairs score 0 and are flagged.
pub fn score_pairs(
    pairs: &[SamplePair],
    dataset: &Dataset,
    p2v: &P2VDatabase,
    vocab: &PhonemeVocabulary,
    head: &VerifierHead,
    params: &ParamStore,
) -> Result<Vec<(f64, bool)>> {
    pairs
        .par_iter()
        .map(|pair| match pair_agreement(pair, dataset, p2v, vocab)? {
            Some(a) => Ok((head.score(params, &a)?, false)),
            None => Ok((0.0, true)),
        })
        .collect()
}

/// Phonemes that confusable edits may introduce: those the P2V database covers.
pub fn edit_inventory(p2v: &P2VDatabase, vocab: &PhonemeVocabulary) -> Vec<PhonemeId> {
    p2v.phonemes()
        .into_iter()
        .filter(|&p| vocab.is_pronounceable(p))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CedTrainConfig {
    pub batch_keywords: usize,
    pub minibatch_size: usize,
    pub deltas: Vec<usize>,
    pub use_confusables: bool,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// GRU width; the embedding dimension when unset.
    pub hidden: Option<usize>,
    /// Batches per epoch; enough for every utterance to appear once as a positive when unset.
    pub batches_per_epoch: Option<usize>,
    pub clip_norm: f64,
    /// Pairs per anchor and polarity for the held-out AUC.
    pub dev_per_anchor: usize,
}

impl Default for CedTrainConfig {
    fn default() -> Self {
        Self {
            batch_keywords: 32,
            minibatch_size: 11,
            deltas: vec![1, 2, 3],
            use_confusables: true,
            epochs: 10,
            lr: 1e-4,
            seed: 0,
            hidden: None,
            batches_per_epoch: None,
            clip_norm: 5.0,
            dev_per_anchor: 11,
        }
    }
}

impl CedTrainConfig {
    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            batch_keywords: self.batch_keywords,
            minibatch_size: self.minibatch_size,
            deltas: self.deltas.clone(),
            use_confusables: self.use_confusables,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CedError::json(path.display().to_string(), e))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_auc_easy: Option<f64>,
    pub dev_auc_hard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedTrainingReport {
    pub epochs: Vec<CedEpochLog>,
    pub steps: usize,
    /// Pairs left out of the loss because they could not be aligned.
    pub skipped_pairs: usize,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
}

impl CedTrainingReport {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(
                &serde_json::to_string(e).map_err(|err| CedError::json("training log", err))?,
            );
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| CedError::io(path, e))
    }
}

struct DevScorer<'a> {
    dev: &'a Dataset,
    p2v: &'a P2VDatabase,
    vocab: &'a PhonemeVocabulary,
    head: &'a VerifierHead,
    inventory: &'a [PhonemeId],
    per_anchor: usize,
    seed: u64,
}

impl DevScorer<'_> {
    fn auc(&self, mode: PairMode, params: &ParamStore) -> Result<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xD5);
        let config = TestPairConfig {
            mode,
            per_anchor: self.per_anchor,
            ..Default::default()
        };
        let pairs = build_test_pairs(self.dev, &config, self.inventory, &mut rng)?;
        let labels: Vec<bool> = pairs.pairs.iter().map(|p| p.label).collect();
        if !labels.contains(&true) || !labels.contains(&false) {
            return Ok(None);
        }
        let scores = score_pairs(
            &pairs.pairs,
            self.dev,
            self.p2v,
            self.vocab,
            self.head,
            params,
        )?;
        let scored: Vec<(f64, bool)> = scores.iter().map(|s| s.0).zip(labels).collect();
        Ok(Some(auc(&scored)?))
    }
}

/// Trains a verifier head with the encoder and P2V database held fixed.
pub fn train_ced(
    encoder: &EncoderCheckpoint,
    p2v: &P2VDatabase,
    train: &Dataset,
    dev: Option<&Dataset>,
    config: &CedTrainConfig,
    vocab: &PhonemeVocabulary,
) -> Result<(VerifierCheckpoint, CedTrainingReport)> {
    let encoder_hash_before = encoder.weights_hash();
    encoder
        .check_vocab(vocab)
        .map_err(|e| CedError::IncompatibleBundle(e.to_string()))?;
    if p2v.source().checkpoint_hash != encoder_hash_before {
        return Err(CedError::IncompatibleBundle(
            "P2V database was built from a different encoder".into(),
        ));
    }
    if p2v.dim() != encoder.config().dim {
        return Err(CedError::IncompatibleBundle(
            "P2V dimension differs from the encoder's".into(),
        ));
    }
    for d in std::iter::once(train).chain(dev) {
        if d.encoder_hash != encoder_hash_before {
            return Err(CedError::IncompatibleBundle(
                "dataset was embedded by a different encoder".into(),
            ));
        }
    }
    if train.is_empty() {
        return Err(CedError::InvalidInput("training dataset is empty".into()));
    }
    if config.deltas.iter().any(|d| !(1..=3).contains(d)) || config.deltas.is_empty() {
        return Err(CedError::InvalidInput(
            "deltas must be a non-empty subset of {1, 2, 3}".into(),
        ));
    }
    let head_config = HeadConfig {
        dim: encoder.config().dim,
        hidden: config.hidden.unwrap_or(encoder.config().dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (head, mut params) = VerifierHead::init(head_config, &mut rng)?;
    let inventory = edit_inventory(p2v, vocab);
    let batch_config = config.batch_config();
    let per_batch =
        batch_config.batch_keywords.min(train.keywords.len()) * batch_config.minibatch_size;
    let batches_per_epoch = config
        .batches_per_epoch
        .unwrap_or_else(|| train.len().div_ceil(per_batch.max(1)))
        .max(1);
    let dev_scorer = dev.map(|dev| DevScorer {
        dev,
        p2v,
        vocab,
        head: &head,
        inventory: &inventory,
        per_anchor: config.dev_per_anchor,
        seed: config.seed,
    });
    let mut adam = Adam::new(&params, AdamConfig::default());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut skipped_pairs = 0;
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_pairs = 0usize;
        for _ in 0..batches_per_epoch {
            let batch = build_batch(train, &batch_config, &inventory, &mut rng)?;
            let pairs: Vec<&SamplePair> = batch.pairs().collect();
            let results: Vec<Option<(f64, Gradients)>> = pairs
                .par_iter()
                .map(|pair| match pair_agreement(pair, train, p2v, vocab)? {
                    Some(a) => Ok(Some(head.loss_and_gradients(&params, &a, pair.label)?)),
                    None => Ok(None),
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&params);
            let mut n = 0usize;
            let mut batch_loss = 0.0;
            for r in results {
                match r {
                    Some((loss, g)) => {
                        batch_loss += loss;
                        grads.merge(g);
                        n += 1;
                    }
                    None => skipped_pairs += 1,
                }
            }
            if n == 0 {
                continue;
            }
            if !batch_loss.is_finite() {
                return Err(CedError::InternalConsistency(format!(
                    "non-finite loss at step {steps}"
                )));
            }
            grads.scale(1.0 / n as f64);
            grads.clip_global_norm(config.clip_norm);
            adam.step(&mut params, &grads, config.lr);
            loss_sum += batch_loss;
            loss_pairs += n;
            steps += 1;
        }
        let loss = loss_sum / loss_pairs.max(1) as f64;
        let (dev_auc_easy, dev_auc_hard) = match &dev_scorer {
            Some(d) => (
                d.auc(PairMode::Easy, &params)?,
                d.auc(PairMode::Hard, &params)?,
            ),
            None => (None, None),
        };
        log::info!(
            "epoch {}: loss {loss:.4} dev AUC easy {} hard {}",
            epoch + 1,
            dev_auc_easy.map_or("-".into(), |a| format!("{a:.2}")),
            dev_auc_hard.map_or("-".into(), |a| format!("{a:.2}"))
        );
        epochs.push(CedEpochLog {
            epoch: epoch + 1,
            loss,
            dev_auc_easy,
            dev_auc_hard,
        });
    }
    let encoder_hash_after = encoder.weights_hash();
    if encoder_hash_after != encoder_hash_before {
        return Err(CedError::InternalConsistency(
            "encoder weights changed during verifier training".into(),
        ));
    }
    let meta = VerifierMetadata {
        version: VERIFIER_VERSION,
        head: head_config,
        vocab_hash: vocab.hash(),
        encoder_hash: encoder_hash_before.clone(),
        p2v_hash: p2v.content_hash(vocab)?,
        training: Some(
            serde_json::to_value(config).map_err(|e| CedError::json("training config", e))?,
        ),
    };
    Ok((
        VerifierCheckpoint { meta, params },
        CedTrainingReport {
            epochs,
            steps,
            skipped_pairs,
            encoder_hash_before,
            encoder_hash_after,
        },
    ))
}
