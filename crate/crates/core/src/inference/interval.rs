use serde::{Deserialize, Serialize};

use super::bootstrap::standard_deviation;
use crate::error::{Result, ZipgError};
use crate::special::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    /// Estimate ± z · bootstrap SD.
    #[default]
    Normal,
    /// Empirical quantiles of the draws.
    Quantile,
    /// Bias-corrected and accelerated quantiles.
    Bca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Method actually used (BCa falls back to quantile when it cannot be computed).
    pub method: IntervalMethod,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Two-sided critical value `z` with `P(|Z| > z) = alpha`.
pub fn two_sided_critical(alpha: f64) -> f64 {
    // Same erfc family as the χ²₁ tail, so intervals and Wald p-values agree at the boundary.
    std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(alpha)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Confidence interval for one coordinate.
///
/// `draws` are the bootstrap replicates of the coordinate; `jackknife` the
/// leave-one-out estimates needed for the BCa acceleration.
pub fn confidence_interval(
    estimate: f64,
    draws: &[f64],
    level: f64,
    method: IntervalMethod,
    jackknife: Option<&[f64]>,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ZipgError::Domain { name: "confidence level", value: level });
    }
    if draws.len() < 2 {
        return Err(ZipgError::InvalidArgument("an interval needs at least two bootstrap draws".into()));
    }
    if draws.iter().any(|v| !v.is_finite()) || !estimate.is_finite() {
        return Err(ZipgError::InvalidArgument("bootstrap draws must be finite".into()));
    }
    let alpha = 1.0 - level;
    let make = |lower: f64, upper: f64, method| ConfidenceInterval { lower, upper, level, method };
    match method {
        IntervalMethod::Normal => {
            let half = two_sided_critical(alpha) * standard_deviation(draws);
            Ok(make(estimate - half, estimate + half, method))
        }
        IntervalMethod::Quantile => {
            let sorted = sorted(draws);
            Ok(make(quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0), method))
        }
        IntervalMethod::Bca => match bca_levels(estimate, draws, alpha, jackknife) {
            Some((lo, hi)) => {
                let sorted = sorted(draws);
                Ok(make(quantile_sorted(&sorted, lo), quantile_sorted(&sorted, hi), method))
            }
            None => {
                log::warn!("BCa correction is degenerate; falling back to the quantile interval");
                confidence_interval(estimate, draws, level, IntervalMethod::Quantile, None)
            }
        },
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Adjusted quantile levels, or `None` when the bias correction or acceleration is undefined.
fn bca_levels(estimate: f64, draws: &[f64], alpha: f64, jackknife: Option<&[f64]>) -> Option<(f64, f64)> {
    let b = draws.len() as f64;
    let below = draws.iter().filter(|&&v| v < estimate).count() as f64;
    let ties = draws.iter().filter(|&&v| v == estimate).count() as f64;
    let z0 = normal_quantile((below + 0.5 * ties) / b);
    if !z0.is_finite() {
        return None;
    }
    let jack = jackknife?;
    if jack.len() < 2 {
        return None;
    }
    let mean = jack.iter().sum::<f64>() / jack.len() as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for &v in jack {
        let d = mean - v;
        s2 += d * d;
        s3 += d * d * d;
    }
    if !(s2 > 0.0) {
        return None;
    }
    let accel = s3 / (6.0 * s2.powf(1.5));
    let adjust = |z: f64| {
        let num = z0 + z;
        normal_cdf(z0 + num / (1.0 - accel * num))
    };
    let lo = adjust(normal_quantile(alpha / 2.0));
    let hi = adjust(normal_quantile(1.0 - alpha / 2.0));
    (lo.is_finite() && hi.is_finite() && lo <= hi).then_some((lo, hi))
}
