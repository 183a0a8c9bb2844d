//! Small distribution helpers.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Central `level` prediction band for a binomial count with `n` trials and
/// success probability `p`, returned as proportions `(lower, upper)`.
///
/// `lower` is the smallest `k` with `P(X <= k) >= (1 - level) / 2` and
/// `upper` the smallest `k` with `P(X <= k) >= (1 + level) / 2`.
pub fn binomial_band(n: usize, p: f64, level: f64) -> (f64, f64) {
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    let lo_target = (1.0 - level) / 2.0;
    let hi_target = (1.0 + level) / 2.0;
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, None);
    for k in 0..=n {
        if k > 0 {
            pmf *= (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
        }
        cdf += pmf;
        if lo.is_none() && cdf >= lo_target {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= hi_target - 1e-12 {
            hi = Some(k);
            break;
        }
    }
    let lo = lo.unwrap_or(0);
    let hi = hi.unwrap_or(n);
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}
