//! Connectionist temporal classification loss in log space.

use ndarray::Array2;

use crate::error::{CedError, Result};
use crate::nn::log_softmax_rows;
use crate::phonemes::{PhonemeId, BLANK_ID};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum frame count for a target: one per label plus one blank between repeats.
pub fn min_frames(target: &[PhonemeId]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// Negative log-likelihood of `target` under per-frame `logits` (`n × classes`,
/// blank at [`BLANK_ID`]) and its gradient with respect to the logits.
pub fn ctc_loss(logits: &Array2<f64>, target: &[PhonemeId]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    let blank = BLANK_ID;
    if logits.ncols() <= blank {
        return Err(CedError::InvalidInput(format!(
            "logits have {} classes, blank index is {blank}",
            logits.ncols()
        )));
    }
    if target.is_empty() || min_frames(target) > n {
        return Err(CedError::AlignmentInfeasible {
            frames: n,
            phonemes: target.len(),
        });
    }
    let logp = log_softmax_rows(logits);
    let labels: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|p| [p.index(), blank]))
        .collect();
    let s_len = labels.len();
    let ninf = f64::NEG_INFINITY;
    let can_skip = |s: usize| s >= 2 && labels[s] != blank && labels[s] != labels[s - 2];

    let mut alpha = Array2::from_elem((n, s_len), ninf);
    alpha[[0, 0]] = logp[[0, labels[0]]];
    alpha[[0, 1]] = logp[[0, labels[1]]];
    for t in 1..n {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            if a > ninf {
                alpha[[t, s]] = a + logp[[t, labels[s]]];
            }
        }
    }
    let mut beta = Array2::from_elem((n, s_len), ninf);
    beta[[n - 1, s_len - 1]] = logp[[n - 1, labels[s_len - 1]]];
    beta[[n - 1, s_len - 2]] = logp[[n - 1, labels[s_len - 2]]];
    for t in (0..n - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]];
            if s + 1 < s_len {
                b = log_add(b, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[[t + 1, s + 2]]);
            }
            if b > ninf {
                beta[[t, s]] = b + logp[[t, labels[s]]];
            }
        }
    }
    let log_likelihood = log_add(alpha[[n - 1, s_len - 1]], alpha[[n - 1, s_len - 2]]);
    if !log_likelihood.is_finite() {
        return Err(CedError::InternalConsistency(
            "CTC likelihood is not finite".into(),
        ));
    }

    // d(-log p)/d z_tk = softmax_tk - (1/p) * sum_{s: l_s = k} alpha_ts * beta_ts / y_tk
    let mut grad = logp.mapv(f64::exp);
    for t in 0..n {
        let mut occupancy = vec![ninf; logits.ncols()];
        for s in 0..s_len {
            let ab = alpha[[t, s]] + beta[[t, s]];
            if ab > ninf {
                let k = labels[s];
                occupancy[k] = log_add(occupancy[k], ab);
            }
        }
        for (k, occ) in occupancy.into_iter().enumerate() {
            if occ > ninf {
                grad[[t, k]] -= (occ - logp[[t, k]] - log_likelihood).exp();
            }
        }
    }
    Ok((-log_likelihood, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonemes::NUM_CLASSES;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collapse(path: &[usize]) -> Vec<usize> {
        let blank = BLANK_ID;
        let mut out = Vec::new();
        let mut prev = None;
        for &l in path {
            if Some(l) != prev && l != blank {
                out.push(l);
            }
            prev = Some(l);
        }
        out
    }

    /// Sums path probabilities over every frame labelling restricted to `alphabet`.
    fn brute_force_nll(logits: &Array2<f64>, target: &[usize], alphabet: &[usize]) -> f64 {
        let logp = log_softmax_rows(logits);
        let n = logits.nrows();
        let mut total = 0.0;
        let mut idx = vec![0usize; n];
        loop {
            let path: Vec<usize> = idx.iter().map(|&i| alphabet[i]).collect();
            if collapse(&path) == target {
                total += (0..n).map(|t| logp[[t, path[t]]]).sum::<f64>().exp();
            }
            let mut t = 0;
            loop {
                if t == n {
                    return -total.ln();
                }
                idx[t] += 1;
                if idx[t] < alphabet.len() {
                    break;
                }
                idx[t] = 0;
                t += 1;
            }
        }
    }

    fn random_logits(n: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, NUM_CLASSES), |_| rng.random_range(-2.0..2.0))
    }

    fn ids(v: &[usize]) -> Vec<PhonemeId> {
        v.iter().map(|&i| PhonemeId(i as u16)).collect()
    }

    #[test]
    fn matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases: [&[usize]; 5] = [&[3], &[3, 7], &[3, 3], &[7, 3, 7], &[3, 3, 7]];
        for target in cases {
            for n in min_frames(&ids(target))..=5 {
                let logits = random_logits(n, &mut rng);
                let (nll, _) = ctc_loss(&logits, &ids(target)).unwrap();
                let oracle = brute_force_nll(&logits, target, &[3, 7, BLANK_ID]);
                assert!(
                    (nll - oracle).abs() < 1e-9,
                    "{target:?} n={n}: {nll} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn infeasible_targets_rejected() {
        let logits = Array2::zeros((2, NUM_CLASSES));
        assert!(matches!(
            ctc_loss(&logits, &ids(&[4, 4])),
            Err(CedError::AlignmentInfeasible { .. })
        ));
        assert!(ctc_loss(&logits, &ids(&[4, 5])).is_ok());
        assert_eq!(min_frames(&ids(&[1, 1, 1, 2])), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>(), m in 1usize..4, extra in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target: Vec<usize> = (0..m).map(|_| rng.random_range(0..6)).collect();
            let n = min_frames(&ids(&target)) + extra;
            let logits = random_logits(n, &mut rng);
            let (_, grad) = ctc_loss(&logits, &ids(&target)).unwrap();
            let h = 1e-5;
            for _ in 0..12 {
                let t = rng.random_range(0..n);
                let k = if rng.random_bool(0.5) { target[rng.random_range(0..m)] } else { rng.random_range(0..NUM_CLASSES) };
                let mut plus = logits.clone();
                plus[[t, k]] += h;
                let mut minus = logits.clone();
                minus[[t, k]] -= h;
                let numeric = (ctc_loss(&plus, &ids(&target)).unwrap().0 - ctc_loss(&minus, &ids(&target)).unwrap().0) / (2.0 * h);
                prop_assert!((numeric - grad[[t, k]]).abs() < 1e-6, "t={} k={}: {} vs {}", t, k, numeric, grad[[t, k]]);
            }
            // each row of the gradient sums to zero (softmax minus a distribution)
            for row in grad.rows() {
                prop_assert!(row.sum().abs() < 1e-9);
            }
        }
    }
}
