//! Weight normalization and resampling shared by all particle filters.

use rand::Rng;

/// Systematic resampling: one uniform offset, `n_out` evenly spaced points
/// through the cumulative weights. Returns source indices.
///
/// `weights` must be nonnegative and sum to 1 (up to rounding).
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n_out: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_out);
    if weights.is_empty() || n_out == 0 {
        return out;
    }
    let step = 1.0 / n_out as f64;
    let offset: f64 = rng.random::<f64>() * step;
    let last = weights.len() - 1;
    let mut i = 0;
    let mut cumulative = weights[0];
    for m in 0..n_out {
        let target = offset + m as f64 * step;
        while cumulative < target && i < last {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Normalizes log-weights in place into linear weights summing to one.
///
/// The maximum is subtracted before exponentiation, so only differences
/// between log-weights matter. Returns `false` if the weights were
/// degenerate (all `-inf` or non-finite), in which case uniform weights are
/// written.
pub fn normalize_log_weights(log_w: &mut [f64]) -> bool {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        fill_uniform(log_w);
        return false;
    }
    let mut sum = 0.0;
    for w in log_w.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    if !(sum > 0.0 && sum.is_finite()) {
        fill_uniform(log_w);
        return false;
    }
    for w in log_w.iter_mut() {
        *w /= sum;
    }
    true
}

pub(crate) fn fill_uniform(w: &mut [f64]) {
    let u = 1.0 / w.len() as f64;
    w.iter_mut().for_each(|x| *x = u);
}

/// Effective sample size `1 / Σ w²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// Weighted mean computed relative to the first value, so a set of identical
/// values returns that value exactly.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let Some(&anchor) = values.first() else {
        return f64::NAN;
    };
    let shift: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - anchor))
        .sum();
    anchor + shift
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn systematic_counts_track_weights() {
        let w = [0.5, 0.25, 0.25, 0.0];
        let idx = systematic_resample(&w, 8, &mut rng_from_seed(1));
        let count = |k| idx.iter().filter(|&&i| i == k).count();
        assert_eq!(count(0), 4);
        assert_eq!(count(1), 2);
        assert_eq!(count(2), 2);
        assert_eq!(count(3), 0);
    }

    #[test]
    fn degenerate_log_weights_fall_back_to_uniform() {
        let mut w = [f64::NEG_INFINITY; 4];
        assert!(!normalize_log_weights(&mut w));
        assert_eq!(w, [0.25; 4]);
    }

    #[test]
    fn identical_values_have_exact_mean() {
        let v = [0.1 + 0.2; 7];
        let w = [1.0 / 7.0; 7];
        assert_eq!(weighted_mean(&v, &w), v[0]);
    }

    #[test]
    fn log_weight_normalization_is_shift_invariant_bitwise() {
        // Dyadic inputs keep every addition exact, so the only thing the
        // normalization can depend on is the differences.
        let base: Vec<f64> = (0..32).map(|i| -((i * 37 % 101) as f64) / 64.0).collect();
        let mut a = base.clone();
        let mut b: Vec<f64> = base.iter().map(|l| l + 1024.0).collect();
        normalize_log_weights(&mut a);
        normalize_log_weights(&mut b);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn normalized_weights_sum_to_one(raw in prop::collection::vec(-50.0f64..5.0, 1..200)) {
            let mut w = raw.clone();
            normalize_log_weights(&mut w);
            let s: f64 = w.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn resampled_indices_are_in_range(raw in prop::collection::vec(0.0f64..1.0, 1..50), n in 1usize..100, seed in any::<u64>()) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let w: Vec<f64> = raw.iter().map(|x| (x + 1e-9 / raw.len() as f64) / total).collect();
            let idx = systematic_resample(&w, n, &mut rng_from_seed(seed));
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.iter().all(|&i| i < w.len()));
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        }
    }
}
