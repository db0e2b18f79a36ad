use ndarray::Array2;

use crate::error::{CedError, Result};

/// `m × n` cosine similarities between text rows and audio rows. Zero-norm rows give 0.
pub fn cosine_matrix(text: &Array2<f64>, audio: &Array2<f64>) -> Result<Array2<f64>> {
    if text.ncols() != audio.ncols() {
        return Err(CedError::InvalidInput(format!(
            "text dimension {} differs from audio dimension {}",
            text.ncols(),
            audio.ncols()
        )));
    }
    let norms =
        |x: &Array2<f64>| -> Vec<f64> { x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect() };
    let tn = norms(text);
    let an = norms(audio);
    let mut out = text.dot(&audio.t());
    for ((i, j), v) in out.indexed_iter_mut() {
        let denom = tn[i] * an[j];
        *v = if denom > 0.0 {
            (*v / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Monotone stepwise assignment of frames to phonemes (0-based phoneme index per frame).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    assign: Vec<usize>,
    phonemes: usize,
}

impl AlignmentPath {
    pub fn new(assign: Vec<usize>, phonemes: usize) -> Result<Self> {
        let path = Self { assign, phonemes };
        path.validate()?;
        Ok(path)
    }

    /// Starts at phoneme 0, ends at `m - 1`, and advances by 0 or 1 per frame.
    pub fn validate(&self) -> Result<()> {
        let a = &self.assign;
        let ok = !a.is_empty()
            && self.phonemes >= 1
            && a[0] == 0
            && a[a.len() - 1] == self.phonemes - 1
            && a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        if ok {
            Ok(())
        } else {
            Err(CedError::InternalConsistency(format!(
                "invalid alignment path {a:?} for {} phonemes",
                self.phonemes
            )))
        }
    }

    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    pub fn num_phonemes(&self) -> usize {
        self.phonemes
    }

    pub fn num_frames(&self) -> usize {
        self.assign.len()
    }

    /// Sum of `values[a(j)][j]` along the path.
    pub fn score(&self, values: &Array2<f64>) -> f64 {
        self.assign
            .iter()
            .enumerate()
            .map(|(j, &i)| values[[i, j]])
            .sum()
    }
}

/// Maximum-score monotone stepwise alignment by dynamic programming.
/// Backtracking prefers the diagonal predecessor on ties.
pub fn dsp_align(values: &Array2<f64>) -> Result<AlignmentPath> {
    let (m, n) = values.dim();
    if m == 0 || n < m {
        return Err(CedError::AlignmentInfeasible {
            frames: n,
            phonemes: m,
        });
    }
    let ninf = f64::NEG_INFINITY;
    let mut d = Array2::from_elem((m, n), ninf);
    d[[0, 0]] = values[[0, 0]];
    for j in 1..n {
        // phoneme i needs at least i earlier frames and leaves m-1-i phonemes for the rest
        let lo = (m + j).saturating_sub(n);
        for i in lo..=j.min(m - 1) {
            let stay = d[[i, j - 1]];
            let diag = if i > 0 { d[[i - 1, j - 1]] } else { ninf };
            d[[i, j]] = values[[i, j]] + stay.max(diag);
        }
    }
    let mut assign = vec![0; n];
    let mut i = m - 1;
    for j in (0..n).rev() {
        assign[j] = i;
        if j == 0 {
            break;
        }
        if i > 0 && d[[i - 1, j - 1]] >= d[[i, j - 1]] {
            i -= 1;
        }
    }
    let path = AlignmentPath {
        assign,
        phonemes: m,
    };
    debug_assert!(path.validate().is_ok());
    Ok(path)
}

/// Zeroes every cosine entry off the path, then multiplies by the audio embedding: `m × d`.
pub fn masked_agreement(
    values: &Array2<f64>,
    path: &AlignmentPath,
    audio: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (m, n) = values.dim();
    if path.num_frames() != n || path.num_phonemes() != m || audio.nrows() != n {
        return Err(CedError::InvalidInput(format!(
            "shape mismatch: cosine {m}x{n}, path {}x{}, audio {} rows",
            path.num_phonemes(),
            path.num_frames(),
            audio.nrows()
        )));
    }
    let mut masked = Array2::zeros((m, n));
    for (j, &i) in path.assign().iter().enumerate() {
        masked[[i, j]] = values[[i, j]];
    }
    Ok(masked.dot(audio))
}
