//! Frame posteriors and greedy CTC decoding with frame-range trace-back.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::phonemes::{PhonemeId, BLANK_ID, NUM_CLASSES};

/// Row-stochastic `n × 75` matrix over the vocabulary plus blank.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    probs: Array2<f64>,
}

impl PosteriorMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() != NUM_CLASSES || probs.nrows() == 0 {
            return Err(CedError::InvalidInput(format!(
                "posterior matrix must be n x {NUM_CLASSES} with n >= 1, got {:?}",
                probs.dim()
            )));
        }
        for (t, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CedError::InvalidInput(format!(
                    "frame {t} has a probability outside [0, 1]"
                )));
            }
            if (row.sum() - 1.0).abs() > 1e-5 {
                return Err(CedError::InvalidInput(format!(
                    "frame {t} sums to {}",
                    row.sum()
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn num_frames(&self) -> usize {
        self.probs.nrows()
    }

    /// Per-frame argmax; the lowest index wins ties.
    pub fn argmax_path(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Inclusive, 0-based frame range `[start, end]` on the subsampled axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

#[allow(clippy::len_without_is_empty)]
impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Greedy decoding result. May be empty when every frame decodes to blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSequence {
    pub phonemes: Vec<PhonemeId>,
    pub segments: Vec<Segment>,
}

/// Collapses an argmax label path: runs merge, blanks drop, and each emission
/// keeps the frame range of its run.
pub fn collapse_path(path: &[usize]) -> DecodedSequence {
    let blank = BLANK_ID;
    let mut phonemes = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();
    let mut t = 0;
    while t < path.len() {
        let label = path[t];
        let start = t;
        while t + 1 < path.len() && path[t + 1] == label {
            t += 1;
        }
        if label != blank {
            phonemes.push(PhonemeId(label as u16));
            segments.push(Segment { start, end: t });
        }
        t += 1;
    }
    DecodedSequence { phonemes, segments }
}

pub fn greedy_decode(posteriors: &PosteriorMatrix) -> DecodedSequence {
    collapse_path(&posteriors.argmax_path())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const B: usize = BLANK_ID;

    fn seg(start: usize, end: usize) -> Segment {
        Segment { start, end }
    }

    #[test]
    fn collapse_examples() {
        let d = collapse_path(&[5, 5, B, 9]);
        assert_eq!(d.phonemes, vec![PhonemeId(5), PhonemeId(9)]);
        assert_eq!(d.segments, vec![seg(0, 1), seg(3, 3)]);

        let d = collapse_path(&[B, B]);
        assert!(d.phonemes.is_empty() && d.segments.is_empty());

        let d = collapse_path(&[5, B, 5]);
        assert_eq!(d.phonemes, vec![PhonemeId(5), PhonemeId(5)]);
        assert_eq!(d.segments, vec![seg(0, 0), seg(2, 2)]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut p = Array2::zeros((1, NUM_CLASSES));
        p[[0, 7]] = 0.5;
        p[[0, 3]] = 0.5;
        let post = PosteriorMatrix::new(p).unwrap();
        assert_eq!(post.argmax_path(), vec![3]);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(PosteriorMatrix::new(Array2::zeros((2, NUM_CLASSES))).is_err());
        assert!(PosteriorMatrix::new(Array2::from_elem((2, 3), 1.0 / 3.0)).is_err());
    }

    proptest! {
        #[test]
        fn segments_partition_non_blank_frames(path in prop::collection::vec(prop_oneof![Just(B), 0usize..4], 0..40)) {
            let d = collapse_path(&path);
            prop_assert_eq!(d.phonemes.len(), d.segments.len());
            prop_assert!(d.phonemes.iter().all(|p| p.index() != B));
            let mut covered = vec![false; path.len()];
            for (i, (p, s)) in d.phonemes.iter().zip(&d.segments).enumerate() {
                if i > 0 {
                    prop_assert!(s.start > d.segments[i - 1].end);
                }
                for t in s.start..=s.end {
                    prop_assert_eq!(path[t], p.index());
                    covered[t] = true;
                }
                if s.start > 0 { prop_assert_ne!(path[s.start - 1], p.index()); }
                if s.end + 1 < path.len() { prop_assert_ne!(path[s.end + 1], p.index()); }
            }
            for (t, &l) in path.iter().enumerate() {
                prop_assert_eq!(covered[t], l != B);
            }
            // consecutive emissions repeat only when a blank separates them
            for (i, w) in d.phonemes.windows(2).enumerate() {
                if w[0] == w[1] {
                    let gap = &path[d.segments[i].end + 1..d.segments[i + 1].start];
                    prop_assert!(!gap.is_empty() && gap.iter().all(|&l| l == B));
                }
            }
        }
    }
}
