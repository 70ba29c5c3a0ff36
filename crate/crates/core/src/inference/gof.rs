use crate::em::FitResult;
use crate::error::Result;
use crate::model::LongitudinalDataset;
use crate::rng::{domain, stream};
use crate::simulation::sample_counts_from_model;
use crate::special::kolmogorov_sf;

/// How many simulated copies of the data the goodness-of-fit check draws.
pub const SIMULATION_MULTIPLE: u64 = 10;

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
///
/// Ties are handled by evaluating both empirical CDFs after each distinct
/// value, which makes the test conservative for discrete data.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> (f64, f64) {
    if x.is_empty() || y.is_empty() {
        return (0.0, 1.0);
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    if d == 0.0 {
        return (0.0, 1.0);
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d))
}

/// KS comparison of the observed counts with counts simulated from the fitted
/// model on the same covariates and depths.
pub fn ks_goodness_of_fit(data: &LongitudinalDataset, fit: &FitResult, seed: u64) -> Result<(f64, f64)> {
    let mut simulated = Vec::with_capacity(data.n_obs() * SIMULATION_MULTIPLE as usize);
    for k in 0..SIMULATION_MULTIPLE {
        let mut rng = stream(seed, &[domain::GOODNESS_OF_FIT, k]);
        simulated.extend(sample_counts_from_model(&fit.params, data, &fit.spec, &mut rng)?.into_iter().map(|w| w as f64));
    }
    let observed: Vec<f64> = data.counts().iter().map(|&w| w as f64).collect();
    Ok(ks_two_sample(&observed, &simulated))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 2.0, 5.0];
        assert_eq!(ks_two_sample(&x, &x), (0.0, 1.0));
    }

    #[test]
    fn disjoint_samples() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = (100..150).map(f64::from).collect();
        let (d, p) = ks_two_sample(&x, &y);
        assert_eq!(d, 1.0);
        assert!(p < 1e-10);
    }

    #[test]
    fn matches_hand_computed_statistic() {
        // ECDF gap is largest after value 2: 3/4 vs 1/3.
        let (d, _) = ks_two_sample(&[1.0, 2.0, 2.0, 4.0], &[2.0, 3.0, 4.0]);
        assert!((d - (0.75 - 1.0 / 3.0)).abs() < 1e-15);
    }
}
