use super::{lloyd_run, lloyd_starts, AssignStats, SortedSamples};
use crate::error::{Error, Result};
use crate::fixq::max_level;

/// Threshold t_i = (i - ½)·α, the median of levels i-1 and i.
#[inline]
fn threshold(i: u32, alpha: f64) -> f64 {
    (f64::from(i) - 0.5) * alpha
}

/// Thresholds t_1 .. t_{2^M - 1}.
pub fn thresholds(alpha: f64, bits: u8) -> Vec<f64> {
    (1..=max_level(bits)).map(|i| threshold(i, alpha)).collect()
}

/// Nearest level of `{0, 1, .., 2^M - 1}·α`.
///
/// A value in `(t_i, t_{i+1}]` maps to `i`; a value exactly on a threshold
/// therefore maps to the lower level.
pub fn quantize_activation(x: f64, alpha: f64, bits: u8) -> u32 {
    debug_assert!(alpha > 0.0);
    // number of thresholds strictly below x
    let (mut lo, mut hi) = (0u32, max_level(bits));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if threshold(mid, alpha) < x {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Fitted uniform activation quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActQuantResult {
    pub alpha: f64,
    pub bits: u8,
    pub thresholds: Vec<f64>,
    /// Σ (x - Q(x))² over the samples.
    pub error: f64,
    /// Error after each assignment step of the winning Lloyd run.
    pub history: Vec<f64>,
}

fn assign(s: &SortedSamples, alpha: f64, bits: u8) -> AssignStats {
    let mut stats = AssignStats { sxq: 0.0, sqq: 0.0 };
    let mut lo = s.xs.partition_point(|&x| x <= threshold(1, alpha));
    let top = max_level(bits);
    for i in 1..=top {
        let hi = if i == top {
            s.xs.len()
        } else {
            s.xs.partition_point(|&x| x <= threshold(i + 1, alpha))
        };
        let q = f64::from(i);
        stats.sxq += q * s.sum(lo, hi);
        stats.sqq += q * q * (hi - lo) as f64;
        lo = hi;
    }
    stats
}

fn direct_error(xs: &[f64], alpha: f64, bits: u8) -> f64 {
    xs.iter()
        .map(|&x| {
            let d = x - alpha * f64::from(quantize_activation(x, alpha, bits));
            d * d
        })
        .sum()
}

/// Fit α by Lloyd iterations: assign every sample to its nearest level, then
/// set α = Σ x·q / Σ q².
///
/// The first run starts at `max / (2^M - 1)`. Further runs start on a uniform
/// grid over `(0, max]` and the lowest-error fit is returned.
pub fn lloyd_activation_fit(samples: &[f64], bits: u8) -> Result<ActQuantResult> {
    if !(1..=16).contains(&bits) {
        return Err(Error::arg(format!("activation width {bits} outside 1..=16")));
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if samples.is_empty() || !(max.is_finite() && max > 0.0) {
        return Err(Error::NoPositiveMass);
    }
    let sorted = SortedSamples::new(samples.to_vec());
    let total_sq = sorted.total_sq();
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for start in lloyd_starts(max / f64::from(max_level(bits)), max) {
        let (alpha, history) = lloyd_run(start, total_sq, |a| assign(&sorted, a, bits));
        let err = direct_error(&sorted.xs, alpha, bits);
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((alpha, err, history));
        }
    }
    let (alpha, error, history) = best.expect("at least one start");
    Ok(ActQuantResult {
        alpha,
        bits,
        thresholds: thresholds(alpha, bits),
        error,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activation_examples() {
        assert_eq!(quantize_activation(1.4, 1.0, 2), 1);
        assert_eq!(quantize_activation(-0.7, 0.3, 4), 0);
        assert_eq!(quantize_activation(0.5, 1.0, 2), 0);
        assert_eq!(quantize_activation(1.5, 1.0, 2), 1);
        assert_eq!(quantize_activation(1.5000001, 1.0, 2), 2);
        assert_eq!(quantize_activation(99.0, 1.0, 2), 3);
    }

    #[test]
    fn thresholds_are_medians() {
        let t = thresholds(0.5, 2);
        assert_eq!(t, vec![0.25, 0.75, 1.25]);
    }

    #[test]
    fn on_grid_samples_fit_exactly() {
        for a0 in [0.37, 1.0, 2.5, 1e-3] {
            let r = lloyd_activation_fit(&[0.0, a0, 2.0 * a0, 3.0 * a0], 2).unwrap();
            assert!((r.alpha - a0).abs() <= 1e-12 * a0, "{a0} -> {}", r.alpha);
            assert!(r.error <= 1e-20, "{}", r.error);
        }
    }

    #[test]
    fn single_sample_prefers_top_level() {
        let r = lloyd_activation_fit(&[2.0], 2).unwrap();
        assert!((r.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.error, 0.0);
    }

    #[test]
    fn no_positive_mass() {
        assert!(matches!(
            lloyd_activation_fit(&[-1.0, 0.0], 4),
            Err(Error::NoPositiveMass)
        ));
        assert!(lloyd_activation_fit(&[], 4).is_err());
    }

    #[test]
    fn prefix_assignment_matches_direct() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37 % 101) as f64 - 20.0) * 0.031).collect();
        let s = SortedSamples::new(xs.clone());
        for alpha in [0.05, 0.1, 0.33] {
            let st = assign(&s, alpha, 3);
            let (mut sxq, mut sqq) = (0.0, 0.0);
            for &x in &xs {
                let q = f64::from(quantize_activation(x, alpha, 3));
                sxq += x * q;
                sqq += q * q;
            }
            assert!((st.sxq - sxq).abs() < 1e-9);
            assert_eq!(st.sqq, sqq);
        }
    }

    proptest! {
        #[test]
        fn threshold_rule_is_nearest_level(x in -2.0f64..20.0, alpha in 0.05f64..3.0, bits in 1u8..=5) {
            let q = quantize_activation(x, alpha, bits);
            let top = max_level(bits);
            // nearest by brute force, ties resolved downward
            let mut best = 0u32;
            for i in 1..=top {
                let d_new = (x - f64::from(i) * alpha).abs();
                let d_old = (x - f64::from(best) * alpha).abs();
                if d_new < d_old { best = i; }
            }
            prop_assert!(q == best || (x - threshold(q.max(best), alpha)).abs() < 1e-12);
        }

        #[test]
        fn lloyd_history_non_increasing(xs in proptest::collection::vec(-1.0f64..5.0, 1..200), bits in 1u8..=4) {
            prop_assume!(xs.iter().any(|&x| x > 0.0));
            let r = lloyd_activation_fit(&xs, bits).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
