//! Easy and hard test pairs, AUC and EER, and evaluation reports.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::phonemes::{sequence_distance, PhonemeId};
use crate::training::{sample_confusable, Dataset, SamplePair};
use crate::verifier::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Easy,
    Hard,
}

impl std::str::FromStr for PairMode {
    type Err = CedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(PairMode::Easy),
            "hard" => Ok(PairMode::Hard),
            other => Err(CedError::InvalidInput(format!(
                "mode must be easy or hard, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for PairMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairMode::Easy => "easy",
            PairMode::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPairConfig {
    pub mode: PairMode,
    pub per_anchor: usize,
    /// Easy negatives lie beyond this edit distance, hard ones within `1..=boundary`.
    pub boundary: usize,
    /// In hard mode, pair confusable texts with the anchor's audio when no keyword is close enough.
    pub confusable_fallback: bool,
}

impl Default for TestPairConfig {
    fn default() -> Self {
        Self {
            mode: PairMode::Easy,
            per_anchor: 11,
            boundary: 3,
            confusable_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TestPairs {
    pub pairs: Vec<SamplePair>,
    /// Negatives built from confusable text rather than another keyword's audio.
    pub fallback_pairs: usize,
    pub skipped_anchors: Vec<String>,
}

fn draw(pool: &[usize], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if pool.len() >= n {
        pool.choose_multiple(rng, n).copied().collect()
    } else {
        (0..n)
            .map(|_| *pool.choose(rng).expect("pool is non-empty"))
            .collect()
    }
}

/// Positives and negatives per anchor keyword. Negatives pair the anchor text with
/// audio of keywords at the mode's edit distance.
pub fn build_test_pairs(
    dataset: &Dataset,
    config: &TestPairConfig,
    inventory: &[PhonemeId],
    rng: &mut impl Rng,
) -> Result<TestPairs> {
    let mut out = TestPairs::default();
    if config.per_anchor == 0 {
        return Ok(out);
    }
    let qualifies = |d: usize| match config.mode {
        PairMode::Easy => d > config.boundary,
        PairMode::Hard => (1..=config.boundary).contains(&d),
    };
    for anchor in &dataset.keywords {
        let pool: Vec<usize> = dataset
            .keywords
            .iter()
            .filter(|k| qualifies(sequence_distance(&anchor.phonemes, &k.phonemes)))
            .flat_map(|k| k.utterances.iter().copied())
            .collect();
        let positives = draw(&anchor.utterances, config.per_anchor, rng);
        let negatives: Vec<SamplePair> = if !pool.is_empty() {
            draw(&pool, config.per_anchor, rng)
                .into_iter()
                .map(|audio| SamplePair {
                    audio,
                    text: anchor.phonemes.clone(),
                    label: false,
                })
                .collect()
        } else if config.mode == PairMode::Hard && config.confusable_fallback {
            let deltas: Vec<usize> = (1..=config.boundary.min(3)).collect();
            let mut v = Vec::with_capacity(config.per_anchor);
            for &audio in &positives {
                v.push(SamplePair {
                    audio,
                    text: sample_confusable(&anchor.phonemes, &deltas, inventory, rng)?,
                    label: false,
                });
            }
            out.fallback_pairs += v.len();
            v
        } else {
            log::warn!(
                "no {} negatives for \"{}\"; anchor skipped",
                config.mode,
                anchor.text
            );
            out.skipped_anchors.push(anchor.text.clone());
            continue;
        };
        out.pairs
            .extend(positives.into_iter().map(|audio| SamplePair {
                audio,
                text: anchor.phonemes.clone(),
                label: true,
            }));
        out.pairs.extend(negatives);
    }
    Ok(out)
}

fn split_counts(scored: &[(f64, bool)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scored.iter().find(|(s, _)| !s.is_finite()) {
        return Err(CedError::InvalidInput(format!("score {s} is not finite")));
    }
    let n_pos = scored.iter().filter(|(_, l)| *l).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CedError::InvalidInput(
            "metrics need at least one positive and one negative".into(),
        ));
    }
    Ok((n_pos, n_neg))
}

/// Mann–Whitney AUC as a percentage; ties earn half credit.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64> {
    let (n_pos, n_neg) = split_counts(scored)?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // Twice the rank sum of positives, in integers: a tie group spanning 1-based
    // ranks a..=b gives each member rank (a + b) / 2.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| scored[k].1).count() as u64;
        rank_sum2 += pos_in_group * (i as u64 + 1 + j as u64 + 1);
        i = j + 1;
    }
    let u2 = rank_sum2 - (n_pos as u64) * (n_pos as u64 + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64 * 100.0)
}

/// Equal error rate as a percentage and the threshold where it occurs.
pub fn eer(scored: &[(f64, bool)]) -> Result<(f64, f64)> {
    let (n_pos, n_neg) = split_counts(scored)?;
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    // (threshold, FAR, FRR), closed by a point that accepts nothing.
    let mut sweep: Vec<(f64, f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let far = (n_neg - neg.partition_point(|&s| s < t)) as f64 / n_neg as f64;
            let frr = pos.partition_point(|&s| s < t) as f64 / n_pos as f64;
            (t, far, frr)
        })
        .collect();
    sweep.push((*thresholds.last().expect("non-empty"), 0.0, 1.0));
    Ok(crossing(&sweep))
}

/// First point where FAR falls to FRR, interpolating linearly inside the bracketing step.
fn crossing(sweep: &[(f64, f64, f64)]) -> (f64, f64) {
    let k = sweep
        .iter()
        .position(|&(_, far, frr)| far <= frr)
        .expect("the closing point has FAR 0 and FRR 1");
    let (t1, far1, frr1) = sweep[k];
    if far1 == frr1 || k == 0 {
        return (far1 * 100.0, t1);
    }
    let (t0, far0, frr0) = sweep[k - 1];
    let alpha = (far0 - frr0) / ((far0 - frr0) - (far1 - frr1));
    let rate = far0 + alpha * (far1 - far0);
    (rate * 100.0, t0 + alpha * (t1 - t0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHashes {
    pub vocab: String,
    pub encoder: String,
    pub p2v: String,
    pub verifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Option<PairMode>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: f64,
    pub eer: f64,
    pub threshold_at_eer: f64,
    pub infeasible_pairs: usize,
    /// Hard negatives that fell back to confusable text on positive audio.
    #[serde(default)]
    pub confusable_fallback_pairs: usize,
    pub bundle_hashes: Option<BundleHashes>,
    /// Seed used to draw the test pairs.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl MetricsReport {
    /// Metrics of already scored pairs.
    pub fn from_scores(scored: &[(f64, bool)], infeasible_pairs: usize) -> Result<Self> {
        let (n_pos, n_neg) = split_counts(scored)?;
        let (eer, threshold_at_eer) = eer(scored)?;
        Ok(Self {
            mode: None,
            n_pos,
            n_neg,
            auc: auc(scored)?,
            eer,
            threshold_at_eer,
            infeasible_pairs,
            confusable_fallback_pairs: 0,
            bundle_hashes: None,
            seed: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CedError::json("metrics report", e))?;
        std::fs::write(path, text + "\n").map_err(|e| CedError::io(path, e))
    }
}

/// Scores every pair with the bundle; unalignable pairs score 0 and are counted.
pub fn evaluate(
    bundle: &Bundle,
    dataset: &Dataset,
    pairs: &TestPairs,
    mode: PairMode,
) -> Result<MetricsReport> {
    let encoder_hash = bundle.encoder.checkpoint().weights_hash();
    if dataset.encoder_hash != encoder_hash {
        return Err(CedError::IncompatibleBundle(
            "evaluation data was embedded by a different encoder than the bundle's".into(),
        ));
    }
    let results = pairs
        .pairs
        .par_iter()
        .map(|p| {
            let u = dataset.utterances.get(p.audio).ok_or_else(|| {
                CedError::InvalidInput(format!("pair references utterance {}", p.audio))
            })?;
            Ok((bundle.score_embedding(&u.embedding, &p.text)?, p.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<(f64, bool)> = results.iter().map(|(v, l)| (v.score, *l)).collect();
    let infeasible = results.iter().filter(|(v, _)| v.infeasible).count();
    let mut report = MetricsReport::from_scores(&scored, infeasible)?;
    report.mode = Some(mode);
    report.confusable_fallback_pairs = pairs.fallback_pairs;
    report.bundle_hashes = Some(BundleHashes {
        vocab: bundle.manifest.vocab_hash.clone(),
        encoder: bundle.manifest.encoder_sha256.clone(),
        p2v: bundle.manifest.p2v_sha256.clone(),
        verifier: bundle.manifest.verifier_sha256.clone(),
    });
    Ok(report)
}
