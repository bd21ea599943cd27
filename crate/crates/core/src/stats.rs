//! Small order-statistic and summation helpers shared across modules.

/// 1-based rank of the empirical alpha-quantile in a sample of size `n`:
/// the smallest k with k/n >= alpha, i.e. ceil(alpha * n), clamped to [1, n].
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    debug_assert!(n >= 1);
    let raw = (alpha * n as f64).ceil() as usize;
    raw.clamp(1, n)
}

/// Empirical alpha-quantile of an ascending-sorted sample: the
/// ceil(alpha * n)-th smallest value (inverse-ECDF convention).
pub fn empirical_quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    sorted[quantile_rank(sorted.len(), alpha) - 1]
}

/// Empirical alpha-quantile of an unsorted sample.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    empirical_quantile_sorted(&sorted, alpha)
}

/// Neumaier-compensated sum; keeps metric accumulation order-insensitive to
/// well below the documented 1e-9 relative tolerance even when terms exceed
/// the running total.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// Arithmetic mean with compensated summation. Panics on empty input.
pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    kahan_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance. Panics on fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    assert!(values.len() >= 2, "variance needs at least two values");
    let m = mean(values);
    kahan_sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64
}
