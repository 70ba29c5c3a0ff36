use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{wald_from_draws, LinearHypothesis, TestMethod, TestReport, MAX_FAILURE_RATE};
use crate::em::{fit, fit_from, fit_restricted, FitResult, FitSettings};
use crate::error::{Result, ZipgError};
use crate::model::{LongitudinalDataset, Matrix, ModelSpec};
use crate::rng::{domain, stream};
use crate::simulation::sample_counts_from_model;

/// Smallest number of replicates accepted by the bootstrap tests.
pub const MIN_REPLICATES: usize = 50;

/// What a nonparametric bootstrap draw resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleUnit {
    /// Individual measurements, ignoring subject membership when drawing.
    #[default]
    Measurement,
    /// Whole subjects with all their measurements.
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    /// Number of replicates `B`.
    pub replicates: usize,
    pub resample: ResampleUnit,
    pub seed: u64,
    pub fit: FitSettings,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { replicates: 200, resample: ResampleUnit::Measurement, seed: 0, fit: FitSettings::default() }
    }
}

impl BootstrapSettings {
    fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(ZipgError::InvalidArgument(format!(
                "at least {MIN_REPLICATES} bootstrap replicates are required, got {}",
                self.replicates
            )));
        }
        Ok(())
    }
}

/// Parameter estimates from the replicates that fitted successfully, in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub draws: Vec<Vec<f64>>,
    pub requested: usize,
    pub failed: usize,
}

impl BootstrapDraws {
    pub fn unreliable(&self) -> bool {
        self.failed as f64 > MAX_FAILURE_RATE * self.requested as f64
    }

    pub fn n_params(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// Draws of a single coordinate.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    /// Sample covariance with denominator `B − 1`.
    pub fn covariance(&self) -> Result<Matrix> {
        let b = self.draws.len();
        if b < 2 {
            return Err(ZipgError::SingularCovariance);
        }
        let n = self.n_params();
        let mut mean = vec![0.0; n];
        for d in &self.draws {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut cov = vec![0.0; n * n];
        for d in &self.draws {
            for i in 0..n {
                let di = d[i] - mean[i];
                for j in i..n {
                    cov[i * n + j] += di * (d[j] - mean[j]);
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let v = cov[i * n + j] / (b - 1) as f64;
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
        }
        Matrix::new(n, n, cov)
    }

    /// Bootstrap standard deviation of coordinate `j`.
    pub fn sd(&self, j: usize) -> f64 {
        standard_deviation(&self.coordinate(j))
    }
}

pub(crate) fn standard_deviation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    if x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Refits `data` and keeps the estimate only if it is usable.
///
/// Refits that pinned a different set of columns than the original fit (a
/// covariate that became constant in the resample) are failures: the pinned
/// coefficient would enter the covariance as an artificial zero.
fn refit(data: Result<LongitudinalDataset>, spec: &ModelSpec, start: &FitResult, settings: &FitSettings) -> Option<Vec<f64>> {
    let data = data.ok()?;
    let res = fit_from(&data, spec, &start.params, settings).ok()?;
    if res.pinned != start.pinned || !res.params.is_finite() {
        return None;
    }
    Some(res.params.to_vec())
}

fn collect(results: Vec<Option<Vec<f64>>>) -> BootstrapDraws {
    let requested = results.len();
    let draws: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let failed = requested - draws.len();
    if failed > 0 {
        log::warn!("{failed} of {requested} bootstrap replicates failed and were dropped");
    }
    BootstrapDraws { draws, requested, failed }
}

fn resample<R: Rng + ?Sized>(data: &LongitudinalDataset, unit: ResampleUnit, rng: &mut R) -> Result<LongitudinalDataset> {
    match unit {
        ResampleUnit::Measurement => {
            let n = data.n_obs();
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            data.select_observations(&rows)
        }
        ResampleUnit::Subject => {
            let n = data.n_subjects();
            let subjects: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            data.select_subjects(&subjects)
        }
    }
}

/// Nonparametric bootstrap: refits on resampled data, warm-started at `estimate`.
pub fn bootstrap_replicates(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    estimate: &FitResult,
    settings: &BootstrapSettings,
) -> Result<BootstrapDraws> {
    settings.validate()?;
    let results = (0..settings.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(settings.seed, &[domain::BOOTSTRAP, b]);
            refit(resample(data, settings.resample, &mut rng), spec, estimate, &settings.fit)
        })
        .collect();
    Ok(collect(results))
}

/// Parametric bootstrap: simulates from `generating` on the observed covariates
/// and depths, then refits the unrestricted model warm-started at `estimate`.
pub fn parametric_replicates(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    generating: &FitResult,
    estimate: &FitResult,
    settings: &BootstrapSettings,
) -> Result<BootstrapDraws> {
    settings.validate()?;
    let results = (0..settings.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(settings.seed, &[domain::PARAMETRIC, b]);
            let sim = sample_counts_from_model(&generating.params, data, spec, &mut rng).and_then(|c| data.with_counts(c));
            refit(sim, spec, estimate, &settings.fit)
        })
        .collect();
    Ok(collect(results))
}

/// Bootstrap Wald test of `hypothesis`.
pub fn bootstrap_wald(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    hypothesis: &LinearHypothesis,
    settings: &BootstrapSettings,
) -> Result<TestReport> {
    hypothesis.check(spec)?;
    let estimate = fit(data, spec, &settings.fit)?;
    let draws = bootstrap_replicates(data, spec, &estimate, settings)?;
    wald_from_draws(&estimate.params.to_vec(), &draws, hypothesis, TestMethod::BootstrapWald)
}

/// Parametric bootstrap Wald test: replicates are simulated from the fit under `H₀`.
pub fn parametric_bootstrap_wald(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    hypothesis: &LinearHypothesis,
    settings: &BootstrapSettings,
) -> Result<TestReport> {
    hypothesis.check(spec)?;
    let estimate = fit(data, spec, &settings.fit)?;
    let null = fit_restricted(data, spec, hypothesis.a(), hypothesis.b(), &settings.fit)?;
    let draws = parametric_replicates(data, spec, &null, &estimate, settings)?;
    wald_from_draws(&estimate.params.to_vec(), &draws, hypothesis, TestMethod::ParametricBootstrapWald)
}

/// Leave-one-measurement-out estimates, warm-started at `estimate` (used for BCa acceleration).
pub fn jackknife_estimates(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    estimate: &FitResult,
    settings: &FitSettings,
) -> Result<Vec<Vec<f64>>> {
    let n = data.n_obs();
    let results: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rows: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            refit(data.select_observations(&rows), spec, estimate, settings)
        })
        .collect();
    let out: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    if out.len() < n {
        log::warn!("{} of {n} jackknife fits failed and were dropped", n - out.len());
    }
    Ok(out)
}
