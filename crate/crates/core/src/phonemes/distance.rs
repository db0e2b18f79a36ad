use super::sequence::PhonemeSequence;
use super::vocab::PhonemeId;
use crate::error::{CedError, Result};

/// Unit-cost Levenshtein distance over token slices. Either side may be empty.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Levenshtein distance between two non-empty phoneme sequences.
pub fn phoneme_edit_distance(a: &[PhonemeId], b: &[PhonemeId]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(CedError::InvalidInput(
            "edit distance needs non-empty operands".into(),
        ));
    }
    Ok(levenshtein(a, b))
}

pub fn sequence_distance(a: &PhonemeSequence, b: &PhonemeSequence) -> usize {
    levenshtein(a.tokens(), b.tokens())
}

/// Phoneme error rate: edit distance over reference length. The hypothesis may be empty.
pub fn cer(reference: &[PhonemeId], hypothesis: &[PhonemeId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(CedError::InvalidInput(
            "CER needs a non-empty reference".into(),
        ));
    }
    Ok(levenshtein(reference, hypothesis) as f64 / reference.len() as f64)
}
