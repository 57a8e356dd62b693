//! Monte Carlo reductions and small-sample statistics.
//!
//! Reductions over paths are *always* serial, in path order, with Neumaier
//! compensation.  Workers may fill per-path buffers in parallel (each slot is
//! a pure function of the seed and the path index), but the moment a sum over
//! paths happens it goes through [`neumaier_sum`] on the ordered buffer — this
//! is what makes every estimate bitwise independent of the thread count.

use serde::Serialize;

/// Compensated (Neumaier) sum of an ordered slice.
pub fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl MCEstimate {
    /// Two-pass mean/variance over an ordered sample buffer.
    pub fn from_samples(xs: &[f64]) -> Self {
        assert!(xs.len() >= 2, "standard error needs at least two samples");
        let n = xs.len() as f64;
        let mean = neumaier_sum(xs) / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = neumaier_sum(&sq) / (n - 1.0);
        Self { mean, std_error: (var / n).sqrt(), n_samples: xs.len() }
    }

    /// |mean - target| expressed in standard errors (∞ if the SE is zero and
    /// the means differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    /// Difference of two independent estimates, with combined standard error.
    pub fn minus(&self, other: &MCEstimate) -> MCEstimate {
        MCEstimate {
            mean: self.mean - other.mean,
            std_error: (self.std_error * self.std_error + other.std_error * other.std_error).sqrt(),
            n_samples: self.n_samples.min(other.n_samples),
        }
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
///
/// The p-value uses the Kolmogorov distribution tail
/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2 k² λ²}` with the finite-sample
/// adjustment `λ = (√n_e + 0.12 + 0.11/√n_e) D` (n_e the effective sample
/// size), accurate enough for the n ≥ 500 sizes used by the Markov checks.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xs[i];
        let y = ys[j];
        let t = x.min(y);
        while i < na && xs[i] <= t {
            i += 1;
        }
        while j < nb && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // Q(λ) = 1 − O(1e-13) below 0.2, where the alternating series converges
    // too slowly to truncate; this also covers identical samples (λ = 0)
    if lambda < 0.2 {
        return (d, 1.0);
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        sign = -sign;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, (2.0 * p).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, Stream};

    #[test]
    fn neumaier_recovers_cancellation() {
        // 1 + 1e16 - 1e16 loses the 1 under naive summation order.
        let xs = [1.0, 1e16, -1e16];
        assert_eq!(neumaier_sum(&xs), 1.0);
    }

    #[test]
    fn estimate_matches_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let e = MCEstimate::from_samples(&xs);
        assert!((e.mean - 2.5).abs() < 1e-15);
        // sample variance 5/3, SE = sqrt(5/12)
        assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_accepts_same_law_and_rejects_shift() {
        let n = 2000;
        let a: Vec<f64> = (0..n).map(|i| standard_normal(1, Stream::Increments, i, 0, 0)).collect();
        let b: Vec<f64> = (0..n).map(|i| standard_normal(2, Stream::Increments, i, 0, 0)).collect();
        let (_, p_same) = ks_two_sample(&a, &b);
        assert!(p_same > 0.01, "same-law KS p-value {p_same} should not reject");
        let c: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        let (_, p_diff) = ks_two_sample(&a, &c);
        assert!(p_diff < 1e-6, "shifted-law KS p-value {p_diff} should reject");
    }

    #[test]
    fn ks_statistic_on_disjoint_supports_is_one() {
        let a = [0.0, 1.0, 2.0];
        let b = [10.0, 11.0];
        let (d, p) = ks_two_sample(&a, &b);
        assert_eq!(d, 1.0);
        // at sizes 3 vs 2 even complete separation is not significant: the
        // exact tail is 2/C(5,2) = 0.2, and the asymptotic p here is ~0.063
        assert!(p > 0.05, "tiny-sample p {p} should not look significant");
        let big_a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let big_b: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        let (d_big, p_big) = ks_two_sample(&big_a, &big_b);
        assert_eq!(d_big, 1.0);
        assert!(p_big < 1e-12, "disjoint supports at n = 100 must reject, got p = {p_big}");
    }
}
