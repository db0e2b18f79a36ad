use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::phonemes::{PhonemeId, PhonemeSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Replace,
    /// Inserts before the original token at the chosen position (or appends at `m`).
    Insert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusableSpec {
    pub delta: usize,
    pub allowed_ops: Vec<EditOp>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    32
}

impl ConfusableSpec {
    pub fn new(delta: usize) -> Self {
        Self {
            delta,
            allowed_ops: vec![EditOp::Replace, EditOp::Insert],
            max_attempts: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.delta) {
            return Err(CedError::InvalidInput(format!(
                "delta must be 1, 2 or 3, got {}",
                self.delta
            )));
        }
        if self.allowed_ops.is_empty() {
            return Err(CedError::InvalidInput(
                "at least one edit operation must be allowed".into(),
            ));
        }
        Ok(())
    }

    /// Number of distinct edit positions available for a keyword of length `m`.
    pub fn positions(&self, m: usize) -> usize {
        if self.allowed_ops.contains(&EditOp::Insert) {
            m + 1
        } else {
            m
        }
    }
}

/// One applied edit, indexed against the original keyword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub op: EditOp,
    pub phoneme: PhonemeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confusable {
    pub sequence: PhonemeSequence,
    /// Sorted by position.
    pub edits: Vec<Edit>,
}

/// Original phonemes at `u - 1`, `u` and `u + 1` that a new phoneme must avoid.
pub fn neighbours(keyword: &[PhonemeId], u: usize) -> Vec<PhonemeId> {
    [u.checked_sub(1), Some(u), Some(u + 1)]
        .into_iter()
        .flatten()
        .filter_map(|i| keyword.get(i).copied())
        .collect()
}

/// Applies edits (sorted by position, distinct positions) against the original index frame.
pub fn apply_edits(keyword: &[PhonemeId], edits: &[Edit]) -> Vec<PhonemeId> {
    let mut out = Vec::with_capacity(keyword.len() + edits.len());
    let mut next = edits.iter().peekable();
    for i in 0..=keyword.len() {
        let edit = next.next_if(|e| e.position == i);
        match edit {
            Some(e) if e.op == EditOp::Insert => {
                out.push(e.phoneme);
                if let Some(&p) = keyword.get(i) {
                    out.push(p);
                }
            }
            Some(e) => out.push(e.phoneme),
            None => {
                if let Some(&p) = keyword.get(i) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Makes a hard negative: `delta` edits at distinct random positions, each a
/// replacement or an insertion of a phoneme that differs from the keyword's
/// phonemes around the edit.
pub fn generate_confusable(
    keyword: &PhonemeSequence,
    spec: &ConfusableSpec,
    inventory: &[PhonemeId],
    rng: &mut impl Rng,
) -> Result<Confusable> {
    spec.validate()?;
    let kw = keyword.tokens();
    let m = kw.len();
    let n_positions = spec.positions(m);
    if spec.delta > n_positions {
        return Err(CedError::GenerationFailed {
            attempts: 0,
            reason: format!(
                "{} edits need distinct positions but only {n_positions} exist",
                spec.delta
            ),
        });
    }
    let ops_at = |u: usize| -> Vec<EditOp> {
        spec.allowed_ops
            .iter()
            .copied()
            .filter(|&op| u < m || op == EditOp::Insert)
            .collect()
    };
    for _ in 0..spec.max_attempts.max(1) {
        let mut positions: Vec<usize> = (0..n_positions).collect();
        positions.shuffle(rng);
        positions.truncate(spec.delta);
        positions.sort_unstable();
        let mut edits = Vec::with_capacity(spec.delta);
        for &u in &positions {
            let op = *ops_at(u)
                .choose(rng)
                .expect("insert is allowed wherever replace is not");
            let banned = neighbours(kw, u);
            let choices: Vec<PhonemeId> = inventory
                .iter()
                .copied()
                .filter(|p| !banned.contains(p))
                .collect();
            let Some(&phoneme) = choices.choose(rng) else {
                break;
            };
            edits.push(Edit {
                position: u,
                op,
                phoneme,
            });
        }
        if edits.len() != spec.delta {
            continue;
        }
        let out = apply_edits(kw, &edits);
        if out != kw {
            return Ok(Confusable {
                sequence: PhonemeSequence::new(out)?,
                edits,
            });
        }
    }
    Err(CedError::GenerationFailed {
        attempts: spec.max_attempts,
        reason: "no edit satisfied the neighbour constraints".into(),
    })
}
