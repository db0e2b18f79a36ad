//! Phoneme-to-vector database: the non-parametric, audio-compliant text encoder.
//!
//! A trained encoder transcribes a corpus; utterances it decodes perfectly are
//! sampled, every emitted phoneme's frames are averaged into a local vector, and
//! local vectors are averaged per phoneme into global vectors. Text is then
//! embedded by looking up the global vector of each of its phonemes.

mod database;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{AudioEmbedding, AudioEncoder, DecodedSequence, Segment};
use crate::error::{CedError, Result};
use crate::features::Manifest;
use crate::phonemes::{
    cer, grapheme_to_phoneme, Lexicon, PhonemeId, PhonemeSequence, PhonemeVocabulary,
};

pub use database::{P2VDatabase, P2VSource, P2V_VERSION};

/// Mean embedding over the frames of one decoded phoneme.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVectorRecord {
    pub phoneme: PhonemeId,
    pub vector: Array1<f64>,
    pub utterance_id: String,
    pub frame_range: Segment,
}

/// One record per emitted phoneme; each vector is the inclusive mean of rows `start..=end`.
pub fn collect_local_vectors(
    embedding: &AudioEmbedding,
    decoded: &DecodedSequence,
    utterance_id: &str,
) -> Result<Vec<LocalVectorRecord>> {
    let e = embedding.vectors();
    decoded
        .phonemes
        .iter()
        .zip(&decoded.segments)
        .map(|(&phoneme, &seg)| {
            if seg.start > seg.end || seg.end >= e.nrows() {
                return Err(CedError::InternalConsistency(format!(
                    "segment [{}, {}] outside {} embedding frames of {utterance_id}",
                    seg.start,
                    seg.end,
                    e.nrows()
                )));
            }
            let mut sum = Array1::<f64>::zeros(e.ncols());
            for t in seg.start..=seg.end {
                sum += &e.row(t);
            }
            Ok(LocalVectorRecord {
                phoneme,
                vector: sum / seg.len() as f64,
                utterance_id: utterance_id.to_string(),
                frame_range: seg,
            })
        })
        .collect()
}

fn default_cap() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildP2VConfig {
    /// Maximum number of CER-0 utterances averaged into the database.
    #[serde(default = "default_cap")]
    pub sample_cap: usize,
    #[serde(default)]
    pub seed: u64,
    /// Substitute the mean of all global vectors for uncovered phonemes instead of failing.
    #[serde(default)]
    pub allow_fallback: bool,
    /// Keep every local vector in the result for auditing and plotting.
    #[serde(default)]
    pub retain_local_vectors: bool,
}

impl Default for BuildP2VConfig {
    fn default() -> Self {
        Self {
            sample_cap: default_cap(),
            seed: 0,
            allow_fallback: false,
            retain_local_vectors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub total_utterances: usize,
    pub cer_zero_utterances: usize,
    pub cer_zero_yield: f64,
    pub sampled_utterances: usize,
    /// Local-vector counts per phoneme symbol.
    pub counts: std::collections::BTreeMap<String, usize>,
    /// Corpus phonemes without a single local vector.
    pub missing: Vec<String>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone)]
pub struct P2VBuild {
    pub database: P2VDatabase,
    pub report: BuildReport,
    /// Present when `retain_local_vectors` was set; in sampled-utterance order.
    pub local_vectors: Option<Vec<LocalVectorRecord>>,
}

/// Runs the encoder over `manifest`, keeps perfectly decoded utterances, samples at
/// most `sample_cap` of them and averages local vectors into global vectors.
pub fn build_p2v(
    manifest: &Manifest,
    encoder: &AudioEncoder,
    vocab: &PhonemeVocabulary,
    config: &BuildP2VConfig,
) -> Result<P2VBuild> {
    encoder.checkpoint().check_vocab(vocab)?;
    if manifest.is_empty() {
        return Err(CedError::InvalidInput("manifest is empty".into()));
    }
    let per_utt: Vec<(PhonemeSequence, Option<Vec<LocalVectorRecord>>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let truth = entry.phoneme_sequence(vocab)?;
            let features = manifest.load_features(entry)?;
            let (emb, decoded) = encoder.transcribe(&features)?;
            let exact = cer(truth.tokens(), &decoded.phonemes)? == 0.0;
            let records = if exact {
                Some(collect_local_vectors(&emb, &decoded, &entry.id)?)
            } else {
                None
            };
            Ok((truth, records))
        })
        .collect::<Result<_>>()?;

    let corpus_phonemes: BTreeSet<PhonemeId> = per_utt
        .iter()
        .flat_map(|(t, _)| t.tokens().iter().copied())
        .collect();
    let mut eligible: Vec<usize> = (0..per_utt.len())
        .filter(|&i| per_utt[i].1.is_some())
        .collect();
    let cer_zero = eligible.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(config.sample_cap);
    eligible.sort_unstable();

    let dim = encoder.dim();
    let mut sums = vec![Array1::<f64>::zeros(dim); crate::phonemes::VOCAB_SIZE];
    let mut counts = vec![0usize; crate::phonemes::VOCAB_SIZE];
    let mut retained = config.retain_local_vectors.then(Vec::new);
    for &i in &eligible {
        for rec in per_utt[i].1.as_ref().unwrap() {
            sums[rec.phoneme.index()] += &rec.vector;
            counts[rec.phoneme.index()] += 1;
            if let Some(r) = retained.as_mut() {
                r.push(rec.clone());
            }
        }
    }
    let mut entries: Vec<(PhonemeId, Array1<f64>, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(p, &c)| (PhonemeId(p as u16), &sums[p] / c as f64, c))
        .collect();
    let missing: Vec<PhonemeId> = corpus_phonemes
        .iter()
        .copied()
        .filter(|p| counts[p.index()] == 0)
        .collect();
    let missing_symbols: Vec<String> = missing
        .iter()
        .map(|p| vocab.symbol(*p).to_string())
        .collect();
    let mut fallback_used = false;
    if !missing.is_empty() {
        if !config.allow_fallback || entries.is_empty() {
            return Err(CedError::Coverage {
                missing: missing_symbols,
            });
        }
        log::warn!(
            "no local vectors for {}; using the mean global vector",
            missing_symbols.join(" ")
        );
        let mut mean = Array1::<f64>::zeros(dim);
        for (_, v, _) in &entries {
            mean += v;
        }
        mean /= entries.len() as f64;
        for p in &missing {
            // counted as one synthetic contribution
            entries.push((*p, mean.clone(), 1));
        }
        fallback_used = true;
    }
    let source = P2VSource {
        checkpoint_hash: encoder.checkpoint().weights_hash(),
        manifest_hash: manifest.content_hash()?,
        sample_cap: config.sample_cap,
        seed: config.seed,
        fallback_used,
    };
    let database = P2VDatabase::new(dim, entries, source)?;
    let report = BuildReport {
        total_utterances: per_utt.len(),
        cer_zero_utterances: cer_zero,
        cer_zero_yield: cer_zero as f64 / per_utt.len() as f64,
        sampled_utterances: eligible.len(),
        counts: database
            .phonemes()
            .into_iter()
            .filter(|p| !missing.contains(p))
            .map(|p| (vocab.symbol(p).to_string(), database.count(p)))
            .collect(),
        missing: missing_symbols,
        fallback_used,
    };
    log::info!(
        "P2V: {}/{} utterances decoded exactly, {} sampled, {} phonemes",
        report.cer_zero_utterances,
        report.total_utterances,
        report.sampled_utterances,
        report.counts.len()
    );
    Ok(P2VBuild {
        database,
        report,
        local_vectors: retained,
    })
}

/// `m × d` text embedding whose row `i` is the global vector of phoneme `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub phonemes: PhonemeSequence,
    pub rows: Array2<f64>,
}

impl TextEmbedding {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

pub fn encode_phonemes(
    phonemes: &PhonemeSequence,
    db: &P2VDatabase,
    vocab: &PhonemeVocabulary,
) -> Result<TextEmbedding> {
    Ok(TextEmbedding {
        rows: db.lookup(phonemes.tokens(), vocab)?,
        phonemes: phonemes.clone(),
    })
}

pub fn encode_text(
    text: &str,
    lexicon: &Lexicon,
    db: &P2VDatabase,
    vocab: &PhonemeVocabulary,
) -> Result<TextEmbedding> {
    encode_phonemes(&grapheme_to_phoneme(text, lexicon, vocab)?, db, vocab)
}

/// Writes up to `per_phoneme` randomly chosen local vectors per phoneme as TSV
/// (`symbol`, then the vector components). Returns the number of rows written.
pub fn export_local_vector_plot_data(
    records: &[LocalVectorRecord],
    per_phoneme: usize,
    seed: u64,
    vocab: &PhonemeVocabulary,
    path: &Path,
) -> Result<usize> {
    if records.is_empty() {
        log::warn!("no local vectors to export");
    }
    let mut by_phoneme: std::collections::BTreeMap<PhonemeId, Vec<&LocalVectorRecord>> =
        Default::default();
    for r in records {
        by_phoneme.entry(r.phoneme).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    let mut rows = 0;
    for (p, recs) in &by_phoneme {
        if recs.len() < per_phoneme {
            log::info!(
                "{}: only {} local vectors available",
                vocab.symbol(*p),
                recs.len()
            );
        }
        for r in recs.choose_multiple(&mut rng, per_phoneme) {
            out.push_str(vocab.symbol(*p));
            for v in &r.vector {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
            rows += 1;
        }
    }
    std::fs::write(path, out).map_err(|e| CedError::io(path, e))?;
    Ok(rows)
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Mean cosine similarity between local vectors of the same phoneme and of
/// different phonemes, over at most `per_phoneme` vectors of each.
pub fn cluster_separation(
    records: &[LocalVectorRecord],
    per_phoneme: usize,
    seed: u64,
) -> (f64, f64) {
    let mut by_phoneme: std::collections::BTreeMap<PhonemeId, Vec<&LocalVectorRecord>> =
        Default::default();
    for r in records {
        by_phoneme.entry(r.phoneme).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<&LocalVectorRecord> = by_phoneme
        .values()
        .flat_map(|v| {
            v.choose_multiple(&mut rng, per_phoneme)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            let c = cosine(&picked[i].vector, &picked[j].vector);
            if picked[i].phoneme == picked[j].phoneme {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra.max(1) as f64, inter / n_inter.max(1) as f64)
}
