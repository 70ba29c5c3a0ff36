//! Monte Carlo harness: simulate, fit, test and summarize many replicates.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_dataset, ScenarioConfig};
use crate::em::{fit, fit_restricted, FitSettings};
use crate::error::{Result, ZipgError};
use crate::inference::{
    bootstrap_replicates, confidence_interval, likelihood_ratio_test, parametric_replicates, wald_from_draws,
    BootstrapSettings, IntervalMethod, LinearHypothesis, ResampleUnit, TestMethod, MAX_FAILURE_RATE,
};
use crate::model::{ModelSpec, Variant};
use crate::rng::{derive_seed, domain, stream};

/// A test applied to every replicate, against `coefficient = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentTest {
    pub method: TestMethod,
    /// Parameter name as produced by [`ModelSpec::param_names`], e.g. `beta:X1`.
    pub coefficient: String,
}

impl ExperimentTest {
    pub fn new(method: TestMethod, coefficient: &str) -> Self {
        Self { method, coefficient: coefficient.to_string() }
    }

    pub fn label(&self) -> String {
        format!("{} {}=0", self.method.label(), self.coefficient)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Monte Carlo replicates `L`.
    pub replicates: usize,
    /// Bootstrap replicates `B` per Monte Carlo replicate and per bootstrap test.
    pub bootstrap: usize,
    /// Compute bootstrap standard errors and intervals (implied by a bWald test).
    pub intervals: bool,
    pub tests: Vec<ExperimentTest>,
    pub alpha: f64,
    pub level: f64,
    pub interval: IntervalMethod,
    pub resample: ResampleUnit,
    pub fit: FitSettings,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            replicates: 200,
            bootstrap: 200,
            intervals: true,
            tests: Vec::new(),
            alpha: 0.05,
            level: 0.95,
            interval: IntervalMethod::Normal,
            resample: ResampleUnit::Measurement,
            fit: FitSettings::default(),
        }
    }
}

/// A complete experiment description: `[scenario]` and `[experiment]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

impl ExperimentFile {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut file: Self = toml::from_str(&text).map_err(|e| ZipgError::Config(format!("{}: {e}", path.display())))?;
        file.scenario.resolve_paths(path.parent().unwrap_or(Path::new(".")))?;
        file.scenario.validate()?;
        Ok(file)
    }
}

/// Per-parameter aggregate over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    /// Mean of `estimate − truth`.
    pub avg_bias: f64,
    /// Empirical standard deviation of the estimates (absent for a single replicate).
    pub empirical_se: Option<f64>,
    /// Mean bootstrap standard error (absent without a bootstrap).
    pub avg_se: Option<f64>,
    pub rmse: f64,
    /// Fraction of intervals covering the truth.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test: ExperimentTest,
    pub rejection_rate: f64,
    /// Replicates where the test produced a p-value.
    pub n: usize,
    /// Replicates where the test failed (e.g. singular covariance).
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    /// Successful replicates `L`.
    pub replicates: usize,
    pub failed_replicates: usize,
    pub parameters: Vec<ParameterSummary>,
    pub tests: Vec<TestSummary>,
    pub mean_zero_proportion: f64,
    /// Share of bootstrap refits that failed, over all replicates.
    pub bootstrap_failure_rate: Option<f64>,
    pub alpha: f64,
    pub level: f64,
}

/// What one replicate contributes to the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub estimate: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub covered: Option<Vec<bool>>,
    pub p_values: Vec<Option<f64>>,
    pub zero_proportion: f64,
    pub bootstrap_failed: usize,
}

fn resolve_tests(settings: &ExperimentSettings, names: &[String]) -> Result<Vec<usize>> {
    settings
        .tests
        .iter()
        .map(|t| {
            if t.method == TestMethod::Wald {
                return Err(ZipgError::InvalidArgument("the observed-information Wald test is diagnostics-only".into()));
            }
            names.iter().position(|n| *n == t.coefficient).ok_or_else(|| {
                ZipgError::InvalidArgument(format!("unknown coefficient '{}'; expected one of {names:?}", t.coefficient))
            })
        })
        .collect()
}

/// Runs replicate `index` of an experiment in isolation.
pub fn run_replicate(
    scenario: &ScenarioConfig,
    spec: &ModelSpec,
    settings: &ExperimentSettings,
    test_index: &[usize],
    index: usize,
) -> Result<ReplicateOutcome> {
    let root = derive_seed(scenario.seed, &[domain::EXPERIMENT, index as u64]);
    let data = simulate_dataset(scenario, &mut stream(root, &[domain::DATA, 0]))?;
    let estimate = fit(&data, spec, &settings.fit)?;
    if !estimate.pinned.is_empty() {
        return Err(ZipgError::InvalidData("a simulated covariate is constant".into()));
    }
    let omega = estimate.params.to_vec();
    let n = omega.len();
    let truth = scenario.truth()?.to_vec();
    let boot = BootstrapSettings { replicates: settings.bootstrap, resample: settings.resample, seed: root, fit: settings.fit };

    let want_draws = settings.intervals || settings.tests.iter().any(|t| t.method == TestMethod::BootstrapWald);
    let draws = if want_draws && settings.bootstrap > 0 { Some(bootstrap_replicates(&data, spec, &estimate, &boot)?) } else { None };
    let (se, covered) = match &draws {
        Some(d) if d.draws.len() >= 2 => {
            let mut se = Vec::with_capacity(n);
            let mut covered = Vec::with_capacity(n);
            for j in 0..n {
                let col = d.coordinate(j);
                se.push(d.sd(j));
                let ci = confidence_interval(omega[j], &col, settings.level, settings.interval, None)?;
                covered.push(ci.contains(truth[j]));
            }
            (Some(se), Some(covered))
        }
        _ => (None, None),
    };

    let mut p_values = Vec::with_capacity(settings.tests.len());
    for (t, &j) in settings.tests.iter().zip(test_index) {
        let h = LinearHypothesis::coefficients(n, &[j])?;
        let report = match t.method {
            TestMethod::BootstrapWald => match &draws {
                Some(d) => wald_from_draws(&omega, d, &h, t.method),
                None => Err(ZipgError::InvalidArgument("bWald needs bootstrap replicates".into())),
            },
            TestMethod::ParametricBootstrapWald => fit_restricted(&data, spec, h.a(), h.b(), &settings.fit)
                .and_then(|null| parametric_replicates(&data, spec, &null, &estimate, &boot))
                .and_then(|d| wald_from_draws(&omega, &d, &h, t.method)),
            TestMethod::LikelihoodRatio => likelihood_ratio_test(&data, spec, &h, &settings.fit),
            TestMethod::Wald => unreachable!("rejected when resolving tests"),
        };
        p_values.push(report.ok().map(|r| r.p_value));
    }

    Ok(ReplicateOutcome {
        index,
        estimate: omega,
        se,
        covered,
        p_values,
        zero_proportion: data.zero_proportion(),
        bootstrap_failed: draws.map_or(0, |d| d.failed),
    })
}

/// Simulates `settings.replicates` datasets from `scenario`, fits each, and
/// aggregates bias, standard errors, RMSE, interval coverage and rejection rates.
///
/// Replicates run on the current rayon pool and are reduced in index order, so
/// the summary is identical for any number of workers.
pub fn run_experiment(scenario: &ScenarioConfig, settings: &ExperimentSettings) -> Result<MonteCarloSummary> {
    scenario.validate()?;
    if settings.replicates == 0 {
        return Err(ZipgError::InvalidArgument("an experiment needs at least one replicate".into()));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(ZipgError::Domain { name: "alpha", value: settings.alpha });
    }
    let spec = scenario.spec();
    let (mean, disp, zi) = scenario.covariate_names();
    let names = spec.param_names(&mean, &disp, &zi);
    let test_index = resolve_tests(settings, &names)?;

    let outcomes: Vec<Result<ReplicateOutcome>> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &spec, settings, &test_index, r))
        .collect();
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * settings.replicates as f64 {
        return Err(ZipgError::TooManyFailures { failed, total: settings.replicates });
    }
    summarize(&ok, &scenario.truth()?.to_vec(), &names, settings, failed)
}

/// Aggregates replicate outcomes in the order given.
pub fn summarize(
    outcomes: &[ReplicateOutcome],
    truth: &[f64],
    names: &[String],
    settings: &ExperimentSettings,
    failed: usize,
) -> Result<MonteCarloSummary> {
    let l = outcomes.len();
    if l == 0 {
        return Err(ZipgError::TooManyFailures { failed, total: failed });
    }
    let lf = l as f64;
    let mut parameters = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let est: Vec<f64> = outcomes.iter().map(|o| o.estimate[j]).collect();
        let mean = est.iter().sum::<f64>() / lf;
        let empirical_se = (l > 1).then(|| (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lf - 1.0)).sqrt());
        let rmse = (est.iter().map(|v| (v - truth[j]).powi(2)).sum::<f64>() / lf).sqrt();
        let ses: Option<Vec<f64>> = outcomes.iter().map(|o| o.se.as_ref().map(|s| s[j])).collect();
        let cov: Option<Vec<bool>> = outcomes.iter().map(|o| o.covered.as_ref().map(|c| c[j])).collect();
        parameters.push(ParameterSummary {
            name: name.clone(),
            truth: truth[j],
            avg_bias: mean - truth[j],
            empirical_se,
            avg_se: ses.map(|s| s.iter().sum::<f64>() / lf),
            rmse,
            coverage: cov.map(|c| c.iter().filter(|&&v| v).count() as f64 / lf),
        });
    }
    let tests = settings
        .tests
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let ps: Vec<f64> = outcomes.iter().filter_map(|o| o.p_values[k]).collect();
            let rejected = ps.iter().filter(|&&p| p < settings.alpha).count();
            TestSummary {
                test: t.clone(),
                rejection_rate: if ps.is_empty() { f64::NAN } else { rejected as f64 / ps.len() as f64 },
                n: ps.len(),
                n_failed: l - ps.len(),
            }
        })
        .collect();
    let bootstrap_failure_rate = (settings.bootstrap > 0 && outcomes.iter().any(|o| o.se.is_some()))
        .then(|| outcomes.iter().map(|o| o.bootstrap_failed).sum::<usize>() as f64 / (lf * settings.bootstrap as f64));
    Ok(MonteCarloSummary {
        replicates: l,
        failed_replicates: failed,
        parameters,
        tests,
        mean_zero_proportion: outcomes.iter().map(|o| o.zero_proportion).sum::<f64>() / lf,
        bootstrap_failure_rate,
        alpha: settings.alpha,
        level: settings.level,
    })
}

impl MonteCarloSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn test(&self, method: TestMethod, coefficient: &str) -> Option<&TestSummary> {
        self.tests.iter().find(|t| t.test.method == method && t.test.coefficient == coefficient)
    }
}

/// Intercept of the zero-inflation logit used by the BIC sensitivity study.
pub const SENSITIVITY_GAMMA0: f64 = -0.847;

/// For each `γ₁`, the fraction of replicates where the single-`p` model has a
/// smaller BIC than the model with covariate-dependent zero inflation.
///
/// Data follow the null design with `logit p = γ₀ + γ₁ X1`.
pub fn sensitivity_bic_experiment(
    base: &ScenarioConfig,
    gamma1_grid: &[f64],
    replicates: usize,
    settings: &FitSettings,
) -> Result<Vec<f64>> {
    if replicates == 0 {
        return Err(ZipgError::InvalidArgument("an experiment needs at least one replicate".into()));
    }
    if let Some(g) = gamma1_grid.iter().find(|g| !(**g >= 0.0)) {
        return Err(ZipgError::InvalidArgument(format!("gamma1 grid values must be nonnegative, got {g}")));
    }
    gamma1_grid
        .iter()
        .enumerate()
        .map(|(k, &g1)| {
            let scenario = ScenarioConfig { p: None, gamma: Some(vec![SENSITIVITY_GAMMA0, g1]), ..base.clone() };
            scenario.validate()?;
            let full_spec = scenario.spec();
            let single = ModelSpec { variant: Variant::Zipg, d3: 0, ..full_spec };
            let wins: Vec<Result<bool>> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream(base.seed, &[domain::EXPERIMENT, k as u64, r as u64]);
                    let data = simulate_dataset(&scenario, &mut rng)?;
                    let a = fit(&data, &single, settings)?;
                    let b = fit(&data, &full_spec, settings)?;
                    Ok(a.bic < b.bic)
                })
                .collect();
            let mut n_ok = 0usize;
            let mut n_win = 0usize;
            for w in wins {
                match w {
                    Ok(w) => {
                        n_ok += 1;
                        n_win += usize::from(w);
                    }
                    Err(e) => log::warn!("sensitivity replicate failed at gamma1 = {g1}: {e}"),
                }
            }
            let failed = replicates - n_ok;
            if failed as f64 > MAX_FAILURE_RATE * replicates as f64 {
                return Err(ZipgError::TooManyFailures { failed, total: replicates });
            }
            Ok(n_win as f64 / n_ok as f64)
        })
        .collect()
}
