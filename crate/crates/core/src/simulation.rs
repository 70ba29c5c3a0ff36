//! Synthetic longitudinal datasets and the Monte Carlo experiment harness.
//!
//! The default design has `n` subjects with `m` measurements each, a
//! subject-level binary covariate `X1` (also the dispersion covariate), and a
//! measurement-level continuous covariate `X2` equal to a subject-level
//! standard normal draw plus small measurement noise.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Bernoulli, Beta, Binomial, Distribution, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZipgError};
use crate::model::{gamma_of_p, link_params, LongitudinalDataset, Matrix, ModelSpec, ParamVector, Variant};

pub use experiment::*;

mod experiment;

/// Measurements per subject: one number for all, or one per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Measurements {
    Equal(usize),
    PerSubject(Vec<usize>),
}

impl Measurements {
    pub fn for_subject(&self, i: usize) -> usize {
        match self {
            Measurements::Equal(m) => *m,
            Measurements::PerSubject(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DepthModel {
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Constant {
        value: f64,
    },
    /// Depths drawn with replacement from a one-column file (or from inline values).
    Empirical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default)]
        values: Vec<f64>,
    },
}

impl Default for DepthModel {
    fn default() -> Self {
        DepthModel::LogNormal { mu: 9.0, sigma: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    #[default]
    Zipg,
    /// Poisson-Gamma counts without zero inflation.
    Pg,
    /// Zero-inflated Beta-Binomial counts with the ZIPG mean and variance.
    ZiBetaBinomial,
}

fn default_noise_variance() -> f64 {
    0.1
}

/// A complete description of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub n_measurements: Measurements,
    pub beta0: f64,
    /// Coefficients of `(X1, X2)`; at most two.
    #[serde(default)]
    pub beta: Vec<f64>,
    pub beta_star0: f64,
    /// Coefficient of `X1` in the dispersion model; at most one.
    #[serde(default)]
    pub beta_star: Vec<f64>,
    /// Zero-inflation probability (single-`p` truth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// `(γ₀, γ₁)` on `X1` for a covariate-linked zero-inflation truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub depth_model: DepthModel,
    #[serde(default)]
    pub generator: Generator,
    /// Variance of the within-subject noise added to `X2`.
    #[serde(default = "default_noise_variance")]
    pub x2_noise_variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// The null design used throughout: `n = 20`, `m = 25`, `β = (0, 0.45)`, `β* = 1`, `p = 0.5`.
    pub fn null_design() -> Self {
        Self {
            n_subjects: 20,
            n_measurements: Measurements::Equal(25),
            beta0: -4.23,
            beta: vec![0.0, 0.45],
            beta_star0: 0.6,
            beta_star: vec![1.0],
            p: Some(0.5),
            gamma: None,
            depth_model: DepthModel::default(),
            generator: Generator::Zipg,
            x2_noise_variance: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ZipgError::Config(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        match &self.n_measurements {
            Measurements::Equal(0) => return bad("n_measurements must be positive".into()),
            Measurements::PerSubject(v) if v.len() != self.n_subjects => {
                return bad(format!("n_measurements lists {} subjects, expected {}", v.len(), self.n_subjects))
            }
            Measurements::PerSubject(v) if v.contains(&0) => {
                return bad("every subject needs at least one measurement".into())
            }
            _ => {}
        }
        if self.beta.len() > 2 {
            return bad("beta has at most two entries (X1, X2)".into());
        }
        if self.beta_star.len() > 1 {
            return bad("beta_star has at most one entry (X1)".into());
        }
        match (&self.p, &self.gamma) {
            (Some(p), None) => {
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("p = {p} must lie in [0, 1]"));
                }
            }
            (None, Some(g)) if g.len() == 2 && g.iter().all(|v| v.is_finite()) => {}
            (None, Some(_)) => return bad("gamma must be [gamma0, gamma1]".into()),
            _ => return bad("exactly one of p and gamma must be given".into()),
        }
        if !(self.x2_noise_variance >= 0.0) {
            return bad("x2_noise_variance must be nonnegative".into());
        }
        match &self.depth_model {
            DepthModel::LogNormal { sigma, mu } if !(*sigma >= 0.0) || !mu.is_finite() => {
                bad("log-normal depth needs finite mu and sigma >= 0".into())
            }
            DepthModel::Constant { value } if !(*value > 0.0) => bad("constant depth must be positive".into()),
            DepthModel::Empirical { values, .. } if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) => {
                bad("empirical depths must be a nonempty list of positive values".into())
            }
            _ => Ok(()),
        }
    }

    /// Reads a scenario from TOML, loading an empirical depth file relative to the scenario file.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ZipgError::Config(e.to_string()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        if let DepthModel::Empirical { path: Some(p), values } = &mut self.depth_model {
            if values.is_empty() {
                let full = if p.is_absolute() { p.clone() } else { base.join(&*p) };
                *values = read_depth_file(&full)?;
            }
        }
        Ok(())
    }

    pub fn total_measurements(&self) -> usize {
        (0..self.n_subjects).map(|i| self.n_measurements.for_subject(i)).sum()
    }

    /// Model specification matching the generating design.
    pub fn spec(&self) -> ModelSpec {
        match self.gamma {
            Some(_) => ModelSpec::zipg_full(self.beta.len(), self.beta_star.len(), 1),
            None => ModelSpec::zipg(self.beta.len(), self.beta_star.len()),
        }
    }

    /// True parameters in the layout of [`ScenarioConfig::spec`].
    pub fn truth(&self) -> Result<ParamVector> {
        let gamma = match (&self.gamma, self.p) {
            (Some(g), _) => g.clone(),
            (None, Some(p)) if p == 0.0 => vec![-f64::INFINITY],
            (None, Some(p)) if p == 1.0 => vec![f64::INFINITY],
            (None, Some(p)) => vec![gamma_of_p(p)?],
            (None, None) => return Err(ZipgError::Config("scenario needs p or gamma".into())),
        };
        Ok(ParamVector {
            beta0: self.beta0,
            beta: self.beta.clone(),
            beta_star0: self.beta_star0,
            beta_star: self.beta_star.clone(),
            gamma,
        })
    }

    pub fn covariate_names(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        let mean = ["X1", "X2"][..self.beta.len()].iter().map(|s| s.to_string()).collect();
        let disp = ["X1"][..self.beta_star.len()].iter().map(|s| s.to_string()).collect();
        let zi = if self.gamma.is_some() { vec!["X1".to_string()] } else { vec![] };
        (mean, disp, zi)
    }
}

fn read_depth_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let field = line.split([',', '\t']).next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => out.push(v),
            // A non-numeric first line is a header.
            Err(_) if k == 0 => {}
            _ => {
                return Err(ZipgError::Parse {
                    path: path.to_path_buf(),
                    line: k + 1,
                    message: format!("expected a positive depth, found '{field}'"),
                })
            }
        }
    }
    Ok(out)
}

/// Simulated covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    /// `(X1, X2)` per measurement.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `X1` per subject.
    pub x1_subject: Vec<f64>,
    pub subject_of: Vec<usize>,
}

/// Draws `X1 ~ Bernoulli(0.5)` per subject and `X2 = N(0,1) + N(0, noise)` per measurement.
pub fn generate_covariates<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Covariates {
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, config.x2_noise_variance.sqrt()).expect("valid normal");
    let total = config.total_measurements();
    let mut cov = Covariates {
        x1: Vec::with_capacity(total),
        x2: Vec::with_capacity(total),
        x1_subject: Vec::with_capacity(config.n_subjects),
        subject_of: Vec::with_capacity(total),
    };
    for i in 0..config.n_subjects {
        let x1 = if coin.sample(rng) { 1.0 } else { 0.0 };
        let level: f64 = std_normal.sample(rng);
        cov.x1_subject.push(x1);
        for _ in 0..config.n_measurements.for_subject(i) {
            cov.x1.push(x1);
            cov.x2.push(level + noise.sample(rng));
            cov.subject_of.push(i);
        }
    }
    cov
}

/// Sequencing depths under the configured depth model.
pub fn generate_depths<R: Rng + ?Sized>(model: &DepthModel, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match model {
        DepthModel::LogNormal { mu, sigma } => {
            let d = LogNormal::new(*mu, *sigma).map_err(|e| ZipgError::Config(e.to_string()))?;
            Ok((0..n).map(|_| d.sample(rng).round().max(1.0)).collect())
        }
        DepthModel::Constant { value } => Ok(vec![*value; n]),
        DepthModel::Empirical { values, .. } => {
            if values.is_empty() {
                return Err(ZipgError::Config("empirical depth model has no values".into()));
            }
            Ok((0..n).map(|_| values[rng.random_range(0..values.len())]).collect())
        }
    }
}

/// Draws counts given linked parameters.
///
/// `zipg`: zero with probability `p`, else `Poisson(λU)` with `U ~ Gamma(1/θ, θ)`.
/// `pg`: the same without the zero mask. `zi-beta-binomial`: a Beta-Binomial on
/// `M` trials with mean `λ` and variance `λ(1 + λθ)`, then the zero mask.
pub fn generate_counts<R: Rng + ?Sized>(
    generator: Generator,
    lambda: &[f64],
    theta_of_obs: impl Fn(usize) -> f64,
    p_of_obs: impl Fn(usize) -> f64,
    depths: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(lambda.len());
    for i in 0..lambda.len() {
        let p = if generator == Generator::Pg { 0.0 } else { p_of_obs(i) };
        if p > 0.0 && rng.random::<f64>() < p {
            out.push(0);
            continue;
        }
        let (l, theta) = (lambda[i], theta_of_obs(i));
        let w = match generator {
            Generator::Zipg | Generator::Pg => sample_pg(l, theta, rng)?,
            Generator::ZiBetaBinomial => sample_beta_binomial(l, theta, depths[i], rng)?,
        };
        out.push(w);
    }
    Ok(out)
}

pub(crate) fn sample_pg<R: Rng + ?Sized>(lambda: f64, theta: f64, rng: &mut R) -> Result<u64> {
    let rate = if theta > 0.0 {
        let g = Gamma::new(1.0 / theta, theta).map_err(|e| ZipgError::InvalidArgument(e.to_string()))?;
        lambda * g.sample(rng)
    } else {
        lambda
    };
    sample_poisson(rate, rng)
}

fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(rate).map_err(|e| ZipgError::InvalidArgument(format!("Poisson rate {rate}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

fn sample_beta_binomial<R: Rng + ?Sized>(lambda: f64, theta: f64, depth: f64, rng: &mut R) -> Result<u64> {
    let trials = depth.round().max(1.0);
    let mu = (lambda / trials).clamp(1e-12, 1.0 - 1e-12);
    // Var = Mμ(1−μ)(1 + (M−1)ρ) matched to λ(1 + λθ).
    let rho = if trials > 1.0 {
        (((1.0 + lambda * theta) / (1.0 - mu) - 1.0) / (trials - 1.0)).clamp(1e-12, 1.0 - 1e-9)
    } else {
        1e-12
    };
    let total = 1.0 / rho - 1.0;
    let beta = Beta::new(mu * total, (1.0 - mu) * total).map_err(|e| ZipgError::InvalidArgument(e.to_string()))?;
    let q: f64 = beta.sample(rng);
    let bin = Binomial::new(trials as u64, q.clamp(0.0, 1.0)).map_err(|e| ZipgError::InvalidArgument(e.to_string()))?;
    Ok(bin.sample(rng))
}

/// Draws a full dataset (covariates, depths, counts) from the scenario.
pub fn simulate_dataset<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<LongitudinalDataset> {
    config.validate()?;
    let cov = generate_covariates(config, rng);
    let n = cov.x1.len();
    let depths = generate_depths(&config.depth_model, n, rng)?;
    let mut mean_cols = vec![cov.x1.clone(), cov.x2.clone()];
    mean_cols.truncate(config.beta.len());
    let mean = Matrix::from_columns(&mean_cols, n)?;
    let disp_cols: Vec<Vec<f64>> = if config.beta_star.is_empty() { vec![] } else { vec![cov.x1_subject.clone()] };
    let disp = Matrix::from_columns(&disp_cols, config.n_subjects)?;
    let zi = config.gamma.as_ref().map(|_| Matrix::from_columns(&[cov.x1.clone()], n)).transpose()?;
    // Counts are unknown yet; build the design with placeholder counts to link parameters.
    let design = LongitudinalDataset::new(vec![0; n], depths, mean, disp, cov.subject_of, zi)?;
    let counts = draw_counts(config.generator, &config.truth()?, &design, &config.spec(), rng)?;
    design.with_counts(counts)
}

fn draw_counts<R: Rng + ?Sized>(
    generator: Generator,
    omega: &ParamVector,
    design: &LongitudinalDataset,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let finite_gamma: Vec<f64> = omega.gamma.iter().map(|g| g.clamp(-745.0, 745.0)).collect();
    let linked = link_params(&ParamVector { gamma: finite_gamma, ..omega.clone() }, design, spec)?;
    let subjects = design.subject_of();
    generate_counts(
        generator,
        &linked.lambda,
        |i| linked.theta[subjects[i]],
        |i| linked.p_at(i),
        design.depths(),
        rng,
    )
}

/// Counts drawn from the fitted model on the covariates and depths of `data`.
pub fn sample_from_model<R: Rng + ?Sized>(
    omega: &ParamVector,
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<LongitudinalDataset> {
    let generator = Generator::Zipg;
    let counts = draw_counts(generator, omega, data, spec, rng)?;
    data.with_counts(counts)
}

/// Just the counts of [`sample_from_model`].
pub fn sample_counts_from_model<R: Rng + ?Sized>(
    omega: &ParamVector,
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<Vec<u64>> {
    draw_counts(Generator::Zipg, omega, data, spec, rng)
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Zipg => "zipg",
            Variant::ZipgFull => "zipg-full",
        }
    }
}
