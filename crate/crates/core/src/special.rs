//! Special functions used by the likelihood and by the test statistics.
//!
//! Log-gamma and digamma use upward recurrence to `x >= 10` followed by the
//! Stirling / de Moivre asymptotic series, which gives close to full double
//! precision for positive arguments. The differences `ln Γ(a + w) - ln Γ(a)`
//! and `ψ(a + w) - ψ(a)` get dedicated routines because the Poisson-Gamma
//! pmf evaluates them with very large `a` when the dispersion is small.

use std::f64::consts::{PI, SQRT_2};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const ASYMPTOTIC_CUTOFF: f64 = 10.0;
const SMALL_INTEGER_SHIFT: f64 = 8.0;

/// Stirling correction `ln Γ(x) - [(x - 1/2) ln x - x + ln(2π)/2]` for `x >= 10`.
#[inline]
fn stirling_correction(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0
                - r2 * (1.0 / 1680.0
                    - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360_360.0 - r2 / 156.0))))))
}

/// Tail of the digamma asymptotic expansion, `ψ(x) - [ln x - 1/(2x)]`, for `x >= 10`.
#[inline]
fn digamma_tail(x: f64) -> f64 {
    let r2 = 1.0 / (x * x);
    -r2 * (1.0 / 12.0
        - r2 * (1.0 / 120.0
            - r2 * (1.0 / 252.0
                - r2 * (1.0 / 240.0
                    - r2 * (1.0 / 132.0 - r2 * (691.0 / 32_760.0 - r2 / 12.0))))))
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x >= ASYMPTOTIC_CUTOFF {
        return (x - 0.5) * x.ln() - x + HALF_LN_2PI + stirling_correction(x);
    }
    let mut shifted = x;
    let mut product = 1.0;
    while shifted < ASYMPTOTIC_CUTOFF {
        product *= shifted;
        shifted += 1.0;
    }
    ln_gamma(shifted) - product.ln()
}

/// Digamma function `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / z;
        z += 1.0;
    }
    acc + z.ln() - 0.5 / z + digamma_tail(z)
}

/// `(ln Γ(x), ψ(x))` for `x > 0`, sharing the logarithm of the asymptotic argument.
#[inline]
pub fn ln_gamma_digamma(x: f64) -> (f64, f64) {
    if x >= ASYMPTOTIC_CUTOFF {
        let lx = x.ln();
        return ((x - 0.5) * lx - x + HALF_LN_2PI + stirling_correction(x), lx - 0.5 / x + digamma_tail(x));
    }
    let mut shifted = x;
    let mut product = 1.0;
    let mut dg = 0.0;
    while shifted < ASYMPTOTIC_CUTOFF {
        product *= shifted;
        dg -= 1.0 / shifted;
        shifted += 1.0;
    }
    let ls = shifted.ln();
    (
        (shifted - 0.5) * ls - shifted + HALF_LN_2PI + stirling_correction(shifted) - product.ln(),
        dg + ls - 0.5 / shifted + digamma_tail(shifted),
    )
}

/// `ln Γ(a + w) - ln Γ(a)` for `a > 0`, `w >= 0`.
pub fn ln_gamma_diff(a: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    if w <= SMALL_INTEGER_SHIFT && w.fract() == 0.0 && a < 1e30 {
        let mut product = 1.0;
        let mut k = 0.0;
        while k < w {
            product *= a + k;
            k += 1.0;
        }
        return product.ln();
    }
    if a >= ASYMPTOTIC_CUTOFF {
        let b = a + w;
        return (a - 0.5) * (w / a).ln_1p() + w * b.ln() - w + stirling_correction(b)
            - stirling_correction(a);
    }
    ln_gamma(a + w) - ln_gamma(a)
}

/// `ψ(a + w) - ψ(a)` for `a > 0`, `w >= 0`.
pub fn digamma_diff(a: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    if w <= SMALL_INTEGER_SHIFT && w.fract() == 0.0 {
        let mut acc = 0.0;
        let mut k = 0.0;
        while k < w {
            acc += 1.0 / (a + k);
            k += 1.0;
        }
        return acc;
    }
    if a >= ASYMPTOTIC_CUTOFF {
        let b = a + w;
        return (w / a).ln_1p() - 0.5 / b + 0.5 / a + digamma_tail(b) - digamma_tail(a);
    }
    digamma(a + w) - digamma(a)
}

/// `ln(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + y)` for `y >= 0`, using the cheaper `ln` where it loses no accuracy.
#[inline]
pub(crate) fn ln_1p_pos(y: f64) -> f64 {
    if y > 0.25 {
        (1.0 + y).ln()
    } else {
        y.ln_1p()
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p_pos((-x).exp())
    } else {
        ln_1p_pos(x.exp())
    }
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + ln_1p_pos((lo - hi).exp())
}

/// Upper tail probability of a chi-squared distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi theta form converges quickly for small arguments.
        let c = -PI * PI / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=20 {
            let odd = (2 * k - 1) as f64;
            sum += (c * odd * odd).exp();
        }
        return (1.0 - (2.0 * PI).sqrt() / lambda * sum).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(ln_gamma(0.5), PI.sqrt().ln(), epsilon = 1e-14);
        // ln(9!) = ln(362880)
        assert_relative_eq!(ln_gamma(10.0), 362_880f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(ln_gamma(171.0), ln_factorial(170), max_relative = 1e-15);
    }

    #[test]
    fn ln_gamma_matches_reference_implementation() {
        for &x in &[1e-6, 0.01, 0.3, 1.7, 4.2, 9.99, 10.0, 12.5, 145.6, 1e4, 3.3e7] {
            let reference = statrs::function::gamma::ln_gamma(x);
            assert_relative_eq!(ln_gamma(x), reference, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert_relative_eq!(digamma(1.0), -euler, epsilon = 1e-14);
        assert_relative_eq!(digamma(0.5), -euler - 2.0 * 2f64.ln(), epsilon = 1e-14);
        for &x in &[0.05, 0.9, 3.0, 11.0, 250.0, 1e6] {
            let reference = statrs::function::gamma::digamma(x);
            assert_relative_eq!(digamma(x), reference, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn digamma_is_derivative_of_ln_gamma() {
        for &x in &[0.2, 1.3, 7.0, 42.0] {
            let h = 1e-5;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert_relative_eq!(digamma(x), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn differences_agree_with_direct_evaluation() {
        for &a in &[0.2, 0.55, 3.0, 10.0, 57.3, 1e5] {
            for &w in &[1.0, 3.0, 8.0, 9.0, 40.0, 1234.0] {
                let direct = ln_gamma(a + w) - ln_gamma(a);
                assert_relative_eq!(ln_gamma_diff(a, w), direct, max_relative = 1e-11, epsilon = 1e-9);
                let direct_psi = digamma(a + w) - digamma(a);
                assert_relative_eq!(digamma_diff(a, w), direct_psi, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn large_shape_difference_keeps_precision() {
        // ln Γ(a + 1) - ln Γ(a) = ln a exactly.
        let a = 1e12;
        assert_relative_eq!(ln_gamma_diff(a, 1.0), a.ln(), max_relative = 1e-15);
        // ψ(a + 20) - ψ(a) = Σ 1/(a + k) ≈ 20 / a
        let expected: f64 = (0..20).map(|k| 1.0 / (a + k as f64)).sum();
        assert_relative_eq!(digamma_diff(a, 20.0), expected, max_relative = 1e-6);
    }

    #[test]
    fn logistic_logit_round_trip() {
        for &p in &[1e-6, 0.3, 0.5, 0.7, 1.0 - 1e-6] {
            assert_relative_eq!(logistic(logit(p)), p, max_relative = 1e-12);
        }
        assert_eq!(logistic(0.0), 0.5);
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_relative_eq!(log_add_exp(0.0, 0.0), 2f64.ln());
    }

    #[test]
    fn chi2_tail_matches_normal_for_one_df() {
        for &z in &[0.5, 1.959_963_984_540_054, 3.0] {
            let two_sided = 2.0 * (1.0 - normal_cdf(z));
            assert_relative_eq!(chi2_sf(z * z, 1), two_sided, max_relative = 1e-9);
        }
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        // df = 2 is exponential: P(X > x) = exp(-x/2)
        assert_relative_eq!(chi2_sf(3.0, 2), (-1.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        assert_relative_eq!(normal_quantile(0.975), 1.959_963_984_540_054, max_relative = 1e-10);
        for &p in &[1e-5, 0.1, 0.5, 0.8] {
            assert_relative_eq!(normal_cdf(normal_quantile(p)), p, max_relative = 1e-10);
        }
    }

    #[test]
    fn kolmogorov_tail_known_points() {
        // Critical value for alpha = 0.05 is 1.3581.
        assert_relative_eq!(kolmogorov_sf(1.358_099_9), 0.05, epsilon = 1e-5);
        // Both series agree around the switch point.
        let lo = kolmogorov_sf(0.999_999);
        let hi = kolmogorov_sf(1.000_001);
        assert!((lo - hi).abs() < 1e-5);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(5.0) < 1e-20);
    }
}
