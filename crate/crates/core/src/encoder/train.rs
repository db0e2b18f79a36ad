//! CTC training and fine-tuning loops.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::EncoderCheckpoint;
use super::config::{EncoderConfig, FeatureConfig};
use super::ctc::{ctc_loss, min_frames};
use super::decode::{greedy_decode, PosteriorMatrix};
use super::model::Conformer;
use crate::error::{CedError, Result};
use crate::features::Manifest;
use crate::nn::{softmax_rows, Adam, AdamConfig, Gradients, ParamStore, Tape, TransformerSchedule};
use crate::phonemes::{cer, PhonemeId, PhonemeVocabulary};

/// One training example held in memory.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub features: Array2<f64>,
    pub target: Vec<PhonemeId>,
}

impl Utterance {
    /// Loads every entry of `manifest`, in manifest order.
    pub fn load_all(manifest: &Manifest, vocab: &PhonemeVocabulary) -> Result<Vec<Utterance>> {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                Ok(Utterance {
                    id: entry.id.clone(),
                    features: manifest.load_features(entry)?.to_f64(),
                    target: entry.phoneme_sequence(vocab)?.tokens().to_vec(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCtcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainCtcConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            peak_lr: 2e-3,
            warmup_steps: 5000,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Constant learning rate; defaults to a tenth of the checkpoint's peak rate.
    pub lr: Option<f64>,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: None,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_cer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochReport>,
    /// Utterances dropped because their target cannot fit the subsampled frames.
    pub skipped: usize,
    pub steps: u64,
    /// Mean loss of the starting weights over the training set.
    pub initial_loss: f64,
    pub param_count: usize,
}

fn utterance_loss(
    model: &Conformer,
    store: &ParamStore,
    utt: &Utterance,
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(store);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let dropout = rng.as_mut().map(|r| r as &mut dyn rand::RngCore);
    let out = model.forward(&mut tape, utt.features.clone(), dropout)?;
    let (nll, grad) = ctc_loss(tape.value(out.logits), &utt.target)?;
    let loss = tape.loss(out.logits, nll, grad);
    Ok((nll, tape.backward(loss)))
}

fn mean_loss(model: &Conformer, store: &ParamStore, data: &[Utterance]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|u| {
            let mut tape = Tape::new(store);
            let out = model.forward(&mut tape, u.features.clone(), None)?;
            Ok(ctc_loss(tape.value(out.logits), &u.target)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean per-utterance phoneme CER of greedy decoding.
pub(crate) fn mean_cer(model: &Conformer, store: &ParamStore, data: &[Utterance]) -> Result<f64> {
    if data.is_empty() {
        return Err(CedError::InvalidInput("no utterances to score".into()));
    }
    let errors: Vec<f64> = data
        .par_iter()
        .map(|u| {
            let mut tape = Tape::new(store);
            let out = model.forward(&mut tape, u.features.clone(), None)?;
            let post = PosteriorMatrix::new(softmax_rows(tape.value(out.logits)))?;
            cer(&u.target, &greedy_decode(&post).phonemes)
        })
        .collect::<Result<_>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn feasible(config: &EncoderConfig, data: Vec<Utterance>) -> (Vec<Utterance>, usize) {
    let before = data.len();
    let kept: Vec<Utterance> = data
        .into_iter()
        .filter(|u| {
            let ok = min_frames(&u.target) <= config.output_frames(u.features.nrows());
            if !ok {
                log::warn!(
                    "skipping {}: {} phonemes do not fit {} subsampled frames",
                    u.id,
                    u.target.len(),
                    config.output_frames(u.features.nrows())
                );
            }
            ok
        })
        .collect();
    let skipped = before - kept.len();
    (kept, skipped)
}

struct Loop<'a> {
    model: &'a Conformer,
    train: &'a [Utterance],
    dev: &'a [Utterance],
    epochs: usize,
    batch_size: usize,
    clip_norm: f64,
    seed: u64,
}

impl Loop<'_> {
    fn run(
        &self,
        store: &mut ParamStore,
        lr_at: impl Fn(u64) -> f64,
    ) -> Result<(Vec<EpochReport>, u64)> {
        let mut adam = Adam::new(store, AdamConfig::default());
        let mut reports = Vec::with_capacity(self.epochs);
        let mut step = 0u64;
        let batch = self.batch_size.max(1);
        for epoch in 0..self.epochs {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut lr = 0.0;
            for chunk in order.chunks(batch) {
                step += 1;
                let base = self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let results: Vec<(f64, Gradients)> = chunk
                    .par_iter()
                    .map(|&i| {
                        let seed = base.wrapping_add(i as u64);
                        utterance_loss(self.model, store, &self.train[i], Some(seed))
                    })
                    .collect::<Result<_>>()?;
                let mut grads = Gradients::zeros_like(store);
                for (loss, g) in results {
                    if !loss.is_finite() {
                        return Err(CedError::InternalConsistency(format!(
                            "non-finite CTC loss at step {step}"
                        )));
                    }
                    total += loss;
                    grads.merge(g);
                }
                grads.scale(1.0 / chunk.len() as f64);
                grads.clip_global_norm(self.clip_norm);
                lr = lr_at(step);
                adam.step(store, &grads, lr);
            }
            let loss = total / self.train.len() as f64;
            let dev_cer = if self.dev.is_empty() {
                None
            } else {
                Some(mean_cer(self.model, store, self.dev)?)
            };
            log::info!(
                "epoch {}: loss {loss:.4} lr {lr:.2e}{}",
                epoch + 1,
                dev_cer
                    .map(|c| format!(" dev CER {c:.4}"))
                    .unwrap_or_default()
            );
            reports.push(EpochReport {
                epoch: epoch + 1,
                loss,
                lr,
                dev_cer,
            });
        }
        Ok((reports, step))
    }
}

/// Trains a fresh encoder with CTC, Adam and the warm-up/inverse-sqrt schedule.
pub fn train_ctc(
    manifest: &Manifest,
    dev: Option<&Manifest>,
    encoder_config: &EncoderConfig,
    feature_config: &FeatureConfig,
    config: &TrainCtcConfig,
    vocab: &PhonemeVocabulary,
) -> Result<(EncoderCheckpoint, TrainingReport)> {
    if manifest.is_empty() {
        return Err(CedError::InvalidInput("training manifest is empty".into()));
    }
    if encoder_config.input_dim != feature_config.n_channels {
        return Err(CedError::InvalidInput(format!(
            "encoder input_dim {} does not match {} feature channels",
            encoder_config.input_dim, feature_config.n_channels
        )));
    }
    let (train, skipped) = feasible(encoder_config, Utterance::load_all(manifest, vocab)?);
    if train.is_empty() {
        return Err(CedError::InvalidInput(
            "no training utterance fits the CTC length constraint".into(),
        ));
    }
    let dev = match dev {
        Some(m) => feasible(encoder_config, Utterance::load_all(m, vocab)?).0,
        None => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (model, mut store) = Conformer::init(encoder_config, &mut rng)?;
    log::info!("encoder parameters: {}", store.num_scalars());
    let initial_loss = mean_loss(&model, &store, &train)?;
    let schedule = TransformerSchedule {
        peak_lr: config.peak_lr,
        warmup_steps: config.warmup_steps,
    };
    let (epochs, steps) = Loop {
        model: &model,
        train: &train,
        dev: &dev,
        epochs: config.epochs,
        batch_size: config.batch_size,
        clip_norm: config.clip_norm,
        seed: config.seed,
    }
    .run(&mut store, |s| schedule.lr(s))?;
    let param_count = store.num_scalars();
    let mut ckpt = EncoderCheckpoint::new(
        encoder_config.clone(),
        feature_config.clone(),
        vocab,
        store,
        manifest.content_hash()?,
    )?;
    ckpt.meta.peak_lr = Some(config.peak_lr);
    ckpt.meta.seed = Some(config.seed);
    Ok((
        ckpt,
        TrainingReport {
            epochs,
            skipped,
            steps,
            initial_loss,
            param_count,
        },
    ))
}

/// Continues training `checkpoint` on `manifest` at a constant learning rate.
pub fn fine_tune(
    checkpoint: &EncoderCheckpoint,
    manifest: &Manifest,
    dev: Option<&Manifest>,
    config: &FineTuneConfig,
    vocab: &PhonemeVocabulary,
) -> Result<(EncoderCheckpoint, TrainingReport)> {
    checkpoint.check_vocab(vocab)?;
    if manifest.is_empty() {
        return Err(CedError::InvalidInput(
            "fine-tuning manifest is empty".into(),
        ));
    }
    let encoder_config = checkpoint.config();
    let model = Conformer::from_store(encoder_config, &checkpoint.params)?;
    let (train, skipped) = feasible(encoder_config, Utterance::load_all(manifest, vocab)?);
    if train.is_empty() {
        return Err(CedError::InvalidInput(
            "no fine-tuning utterance fits the CTC length constraint".into(),
        ));
    }
    let dev = match dev {
        Some(m) => feasible(encoder_config, Utterance::load_all(m, vocab)?).0,
        None => Vec::new(),
    };
    let lr = config
        .lr
        .or(checkpoint.meta.peak_lr.map(|p| p / 10.0))
        .unwrap_or(TrainCtcConfig::default().peak_lr / 10.0);
    let mut store = checkpoint.params.clone();
    let initial_loss = mean_loss(&model, &store, &train)?;
    let (epochs, steps) = Loop {
        model: &model,
        train: &train,
        dev: &dev,
        epochs: config.epochs,
        batch_size: config.batch_size,
        clip_norm: config.clip_norm,
        seed: config.seed,
    }
    .run(&mut store, |_| lr)?;
    let mut out = checkpoint.clone();
    out.params = store;
    out.meta.train_manifest_hash = manifest.content_hash()?;
    out.meta.seed = Some(config.seed);
    Ok((
        out,
        TrainingReport {
            epochs,
            skipped,
            steps,
            initial_loss,
            param_count: checkpoint.params.num_scalars(),
        },
    ))
}
