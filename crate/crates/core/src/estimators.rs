//! Robust mean estimation for heavy-tailed samples.
//!
//! The median-of-means estimator splits `n` samples into `k` consecutive
//! blocks of `N = floor(n / k)` samples, averages each block, and returns the
//! median of the block means. Under a bounded centered `(1+ε)`-th moment it
//! concentrates at the rate given by [`concentration_radius`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::util::median;

/// Default value of the estimator constant `c`.
pub const DEFAULT_ESTIMATOR_CONSTANT: f64 = 12.0;

fn default_c() -> f64 {
    DEFAULT_ESTIMATOR_CONSTANT
}

/// Tail parameter `ε`, moment bound `v` and estimator constant `c`.
///
/// Every arm is assumed to satisfy `E|X - μ|^(1+ε) <= v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailSpec {
    pub epsilon: f64,
    pub v: f64,
    #[serde(default = "default_c")]
    pub c: f64,
}

impl HeavyTailSpec {
    pub fn new(epsilon: f64, v: f64, c: f64) -> Result<Self> {
        let spec = Self { epsilon, v, c };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with the default estimator constant.
    pub fn with_default_c(epsilon: f64, v: f64) -> Result<Self> {
        Self::new(epsilon, v, DEFAULT_ESTIMATOR_CONSTANT)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid("epsilon", format!("{} not in (0, 1]", self.epsilon)));
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(invalid("v", format!("{} must be positive", self.v)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid("c", format!("{} must be positive", self.c)));
        }
        Ok(())
    }

    /// Moment order `1 + ε`.
    pub fn order(&self) -> f64 {
        1.0 + self.epsilon
    }
}

/// Confidence parameter `δ ∈ (0, 1)` of a single estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub delta: f64,
}

impl EstimatorConfig {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self { delta })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("{delta} not in (0, 1)")))
    }
}

/// Number of median-of-means blocks:
/// `k = floor(min(8 ln(e^{1/8} / δ), n / 2))`, clamped below to 1.
pub fn mom_group_count(n: usize, delta: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    check_delta(delta)?;
    let by_confidence = 8.0 * (0.125 - delta.ln());
    let by_size = n as f64 / 2.0;
    // 1e-9 guards against ln round-off turning an exact integer into k - 1.
    let k = (by_confidence.min(by_size) + 1e-9).floor();
    Ok((k as usize).max(1))
}

/// Median of `k` block means over the leading `k * floor(n / k)` samples.
///
/// Trailing samples beyond the last full block are discarded.
pub fn median_of_means_with_groups(samples: &[f64], groups: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if groups == 0 || groups > samples.len() {
        return Err(invalid(
            "groups",
            format!("{groups} not in 1..={}", samples.len()),
        ));
    }
    let block = samples.len() / groups;
    let mut means: Vec<f64> = samples
        .chunks_exact(block)
        .take(groups)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect();
    Ok(median(&mut means))
}

/// Median-of-means estimate with the group count from [`mom_group_count`].
pub fn median_of_means(samples: &[f64], delta: f64) -> Result<f64> {
    let k = mom_group_count(samples.len(), delta)?;
    median_of_means_with_groups(samples, k)
}

/// High-probability deviation bound
/// `v^{1/(1+ε)} (c ln(1/δ) / n)^{ε/(1+ε)}`.
pub fn concentration_radius(n: usize, spec: &HeavyTailSpec, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "sample count must be at least 1"));
    }
    check_delta(delta)?;
    let eps = spec.epsilon;
    let scale = spec.v.powf(1.0 / (1.0 + eps));
    let rate = (spec.c * (1.0 / delta).ln() / n as f64).powf(eps / (1.0 + eps));
    Ok(scale * rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn group_count_examples() {
        assert_eq!(mom_group_count(100, (-1.0f64).exp()).unwrap(), 9);
        assert_eq!(mom_group_count(4, 1e-6).unwrap(), 2);
        assert_eq!(mom_group_count(1, 0.9).unwrap(), 1);
    }

    #[test]
    fn group_count_rejects_empty_and_bad_delta() {
        assert!(matches!(mom_group_count(0, 0.1), Err(Error::EmptySamples)));
        assert!(mom_group_count(10, 0.0).is_err());
        assert!(mom_group_count(10, 1.0).is_err());
    }

    #[test]
    fn constant_and_single_samples() {
        let s = vec![3.7; 50];
        assert_eq!(median_of_means(&s, 0.01).unwrap(), 3.7);
        assert_eq!(median_of_means(&[-2.25], 0.3).unwrap(), -2.25);
        assert!(matches!(median_of_means(&[], 0.3), Err(Error::EmptySamples)));
    }

    #[test]
    fn forced_three_groups() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(median_of_means_with_groups(&s, 3).unwrap(), 3.5);
    }

    #[test]
    fn trailing_samples_are_discarded() {
        // k = 2, N = 2: blocks [0, 0] and [2, 2]; the trailing 1000 is dropped.
        let s = [0.0, 0.0, 2.0, 2.0, 1000.0];
        assert_eq!(median_of_means_with_groups(&s, 2).unwrap(), 1.0);
    }

    #[test]
    fn radius_examples() {
        let spec = HeavyTailSpec::new(1.0, 1.0, 1.0).unwrap();
        let d = (-1.0f64).exp();
        assert!((concentration_radius(100, &spec, d).unwrap() - 0.1).abs() < 1e-12);
        let spec4 = HeavyTailSpec::new(1.0, 4.0, 1.0).unwrap();
        assert!((concentration_radius(100, &spec4, d).unwrap() - 0.2).abs() < 1e-12);
        let a = concentration_radius(100, &spec, 0.05).unwrap();
        let b = concentration_radius(400, &spec, 0.05).unwrap();
        assert!((b - a / 2.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(HeavyTailSpec::new(0.0, 1.0, 1.0).is_err());
        assert!(HeavyTailSpec::new(1.5, 1.0, 1.0).is_err());
        assert!(HeavyTailSpec::new(0.5, 0.0, 1.0).is_err());
        assert!(HeavyTailSpec::new(0.5, 1.0, -1.0).is_err());
        assert!(EstimatorConfig::new(1.0).is_err());
        let s: HeavyTailSpec = serde_json::from_str(r#"{"epsilon":0.5,"v":2.0}"#).unwrap();
        assert_eq!(s.c, DEFAULT_ESTIMATOR_CONSTANT);
    }

    proptest! {
        #[test]
        fn estimate_lies_within_sample_range(
            samples in prop::collection::vec(-1e6f64..1e6, 1..200),
            delta in 0.001f64..0.999,
        ) {
            let est = median_of_means(&samples, delta).unwrap();
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(est >= lo - 1e-9 && est <= hi + 1e-9);
        }

        #[test]
        fn shift_equivariance(
            samples in prop::collection::vec(-64i32..64, 1..200),
            shift in -64i32..64,
            delta in 0.001f64..0.999,
        ) {
            // Integer-valued samples keep every block mean exact in f64.
            let xs: Vec<f64> = samples.iter().map(|&x| x as f64).collect();
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift as f64).collect();
            let a = median_of_means(&xs, delta).unwrap();
            let b = median_of_means(&shifted, delta).unwrap();
            prop_assert!((b - (a + shift as f64)).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn radius_monotone(
            n in 1usize..10_000,
            eps in 0.05f64..=1.0,
            v in 0.01f64..10.0,
            c in 0.5f64..20.0,
            delta in 0.001f64..0.9,
        ) {
            let spec = HeavyTailSpec::new(eps, v, c).unwrap();
            let r = concentration_radius(n, &spec, delta).unwrap();
            prop_assert!(concentration_radius(n + 1, &spec, delta).unwrap() < r);
            let bigger_v = HeavyTailSpec::new(eps, v * 2.0, c).unwrap();
            prop_assert!(concentration_radius(n, &bigger_v, delta).unwrap() >= r);
            let bigger_c = HeavyTailSpec::new(eps, v, c * 2.0).unwrap();
            prop_assert!(concentration_radius(n, &bigger_c, delta).unwrap() >= r);
            prop_assert!(concentration_radius(n, &spec, delta / 2.0).unwrap() >= r);
        }
    }
}
