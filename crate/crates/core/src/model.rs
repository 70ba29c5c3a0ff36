//! The ZIPG probability model: parameter and data types, log links, the
//! Poisson-Gamma pmf and its first two moments.
//!
//! The multiplicative perturbation is `U ~ Gamma(shape = 1/θ, scale = θ)`,
//! so `E[U] = 1` and `Var[U] = θ`. Marginally
//! `W | no zero-inflation ~ PG(λ, θ)` with mean `λ` and variance `λ(1 + λθ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZipgError};
use crate::special::{ln_factorial, ln_gamma_diff, logistic, logit};

/// Below this dispersion the Poisson-Gamma pmf is replaced by its Poisson limit.
pub const POISSON_FLOOR: f64 = 1e-8;

/// Dense row-major matrix used for covariate designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(ZipgError::InvalidArgument(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(ZipgError::InvalidArgument(format!(
                    "row {i} has {} columns, expected {ncols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { nrows: rows.len(), ncols, data })
    }

    pub fn from_columns(columns: &[Vec<f64>], nrows: usize) -> Result<Self> {
        let ncols = columns.len();
        let mut m = Self::zeros(nrows, ncols);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != nrows {
                return Err(ZipgError::InvalidArgument(format!(
                    "column {j} has {} rows, expected {nrows}",
                    col.len()
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                m.data[i * ncols + j] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix made of the given rows, in order (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { nrows: rows.len(), ncols: self.ncols, data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetMode {
    /// `log(M_ij)`.
    #[default]
    LogDepth,
    /// Log of DESeq-style median-of-ratios size factors.
    LogMedianOfRatios,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single zero-inflation probability per taxon.
    #[default]
    Zipg,
    /// Zero-inflation probability linked to covariates through a logit model.
    ZipgFull,
}

/// Which covariate columns enter the mean, dispersion and zero-inflation models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub offset_mode: OffsetMode,
    pub variant: Variant,
    pub poisson_floor: f64,
}

impl ModelSpec {
    pub fn zipg(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            d3: 0,
            offset_mode: OffsetMode::LogDepth,
            variant: Variant::Zipg,
            poisson_floor: POISSON_FLOOR,
        }
    }

    pub fn zipg_full(d1: usize, d2: usize, d3: usize) -> Self {
        Self { d3, variant: Variant::ZipgFull, ..Self::zipg(d1, d2) }
    }

    /// Spec matching the covariate dimensions of `data`.
    pub fn for_dataset(data: &LongitudinalDataset, variant: Variant) -> Self {
        match variant {
            Variant::Zipg => Self::zipg(data.d1(), data.d2()),
            Variant::ZipgFull => Self::zipg_full(data.d1(), data.d2(), data.d3()),
        }
    }

    pub fn with_offset(mut self, mode: OffsetMode) -> Self {
        self.offset_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == Variant::Zipg && self.d3 > 0 {
            return Err(ZipgError::InvalidArgument(
                "zero-inflation covariates require the zipg-full variant".into(),
            ));
        }
        if !(self.poisson_floor >= 0.0) {
            return Err(ZipgError::InvalidArgument("poisson floor must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of zero-inflation parameters (`γ` or `γ₀, γ₁..`).
    pub fn n_gamma(&self) -> usize {
        match self.variant {
            Variant::Zipg => 1,
            Variant::ZipgFull => self.d3 + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.d1 + self.d2 + 2 + self.n_gamma()
    }

    #[inline]
    pub fn mean_offset(&self) -> usize {
        0
    }

    #[inline]
    pub fn disp_offset(&self) -> usize {
        self.d1 + 1
    }

    #[inline]
    pub fn gamma_offset(&self) -> usize {
        self.d1 + self.d2 + 2
    }

    /// Flat index of the coefficient on mean covariate `j` (0-based; the intercept sits at the offset).
    pub fn mean_index(&self, j: usize) -> usize {
        self.mean_offset() + 1 + j
    }

    /// Flat index of the coefficient on dispersion covariate `j` (0-based; the intercept sits at the offset).
    pub fn disp_index(&self, j: usize) -> usize {
        self.disp_offset() + 1 + j
    }

    /// Flat index of the coefficient on zero-inflation covariate `j` (0-based; the intercept sits at the offset).
    pub fn gamma_index(&self, j: usize) -> usize {
        self.gamma_offset() + 1 + j
    }

    /// Parameter names in flat order, given covariate names for each part.
    pub fn param_names(&self, mean: &[String], disp: &[String], zi: &[String]) -> Vec<String> {
        let mut names = vec!["beta0".to_string()];
        names.extend((0..self.d1).map(|j| {
            mean.get(j).map(|n| format!("beta:{n}")).unwrap_or_else(|| format!("beta{}", j + 1))
        }));
        names.push("beta_star0".into());
        names.extend((0..self.d2).map(|j| {
            disp.get(j)
                .map(|n| format!("beta_star:{n}"))
                .unwrap_or_else(|| format!("beta_star{}", j + 1))
        }));
        match self.variant {
            Variant::Zipg => names.push("gamma".into()),
            Variant::ZipgFull => {
                names.push("gamma0".into());
                names.extend((0..self.d3).map(|j| {
                    zi.get(j).map(|n| format!("gamma:{n}")).unwrap_or_else(|| format!("gamma{}", j + 1))
                }));
            }
        }
        names
    }
}

/// The full parameter set `(β₀, β, β₀*, β*, γ)` in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub beta_star0: f64,
    pub beta_star: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            beta0: 0.0,
            beta: vec![0.0; spec.d1],
            beta_star0: 0.0,
            beta_star: vec![0.0; spec.d2],
            gamma: vec![0.0; spec.n_gamma()],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.beta_star.len() + self.gamma.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.beta0);
        v.extend_from_slice(&self.beta);
        v.push(self.beta_star0);
        v.extend_from_slice(&self.beta_star);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn from_slice(spec: &ModelSpec, x: &[f64]) -> Result<Self> {
        if x.len() != spec.n_params() {
            return Err(ZipgError::DimensionMismatch {
                matrix: "parameter vector",
                expected: spec.n_params(),
                found: x.len(),
            });
        }
        let d = spec.disp_offset();
        let g = spec.gamma_offset();
        Ok(Self {
            beta0: x[0],
            beta: x[1..d].to_vec(),
            beta_star0: x[d],
            beta_star: x[d + 1..g].to_vec(),
            gamma: x[g..].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Checks the length against `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let checks = [
            ("mean coefficients", spec.d1, self.beta.len()),
            ("dispersion coefficients", spec.d2, self.beta_star.len()),
            ("zero-inflation coefficients", spec.n_gamma(), self.gamma.len()),
        ];
        for (matrix, expected, found) in checks {
            if expected != found {
                return Err(ZipgError::DimensionMismatch { matrix, expected, found });
            }
        }
        if !self.is_finite() {
            return Err(ZipgError::InvalidArgument("parameter vector has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Counts, depths and covariates for one taxon across all subjects and measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    counts: Vec<u64>,
    depths: Vec<f64>,
    size_factors: Option<Vec<f64>>,
    mean_covariates: Matrix,
    disp_covariates: Matrix,
    zi_covariates: Option<Matrix>,
    subject_of: Vec<usize>,
    n_subjects: usize,
    ln_w_factorial: Vec<f64>,
}

impl LongitudinalDataset {
    /// Builds and validates a dataset.
    ///
    /// `mean_covariates` has one row per observation, `disp_covariates` one row
    /// per subject. Subjects must be labelled `0..n` with every label used.
    pub fn new(
        counts: Vec<u64>,
        depths: Vec<f64>,
        mean_covariates: Matrix,
        disp_covariates: Matrix,
        subject_of: Vec<usize>,
        zi_covariates: Option<Matrix>,
    ) -> Result<Self> {
        let n_obs = counts.len();
        if n_obs == 0 {
            return Err(ZipgError::InvalidData("dataset has no observations".into()));
        }
        let dims = [
            ("depths", n_obs, depths.len()),
            ("subject index", n_obs, subject_of.len()),
            ("mean covariates", n_obs, mean_covariates.nrows()),
        ];
        for (matrix, expected, found) in dims {
            if expected != found {
                return Err(ZipgError::DimensionMismatch { matrix, expected, found });
            }
        }
        if let Some(z) = &zi_covariates {
            if z.nrows() != n_obs {
                return Err(ZipgError::DimensionMismatch {
                    matrix: "zero-inflation covariates",
                    expected: n_obs,
                    found: z.nrows(),
                });
            }
        }
        let n_subjects = disp_covariates.nrows();
        let mut seen = vec![false; n_subjects];
        for (i, &s) in subject_of.iter().enumerate() {
            if s >= n_subjects {
                return Err(ZipgError::InvalidData(format!(
                    "observation {i} maps to subject {s} but only {n_subjects} subjects have dispersion covariates"
                )));
            }
            seen[s] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(ZipgError::InvalidData(format!(
                "subject {missing} has no observations; subjects must be contiguous 0..n"
            )));
        }
        if let Some(i) = depths.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(ZipgError::InvalidData(format!(
                "depth of observation {i} is {}; depths must be positive",
                depths[i]
            )));
        }
        let all_finite = mean_covariates.as_slice().iter().all(|v| v.is_finite())
            && disp_covariates.as_slice().iter().all(|v| v.is_finite())
            && zi_covariates.as_ref().map_or(true, |z| z.as_slice().iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(ZipgError::InvalidData("covariates must be finite".into()));
        }
        let exceeding = counts.iter().zip(&depths).filter(|(&w, &m)| w as f64 > m).count();
        if exceeding > 0 {
            log::warn!("{exceeding} observations have a count larger than their depth");
        }
        let ln_w_factorial = counts.iter().map(|&w| ln_factorial(w)).collect();
        Ok(Self {
            counts,
            depths,
            size_factors: None,
            mean_covariates,
            disp_covariates,
            zi_covariates,
            subject_of,
            n_subjects,
            ln_w_factorial,
        })
    }

    /// Attaches median-of-ratios size factors (one per observation).
    pub fn with_size_factors(mut self, factors: Vec<f64>) -> Result<Self> {
        if factors.len() != self.n_obs() {
            return Err(ZipgError::DimensionMismatch {
                matrix: "size factors",
                expected: self.n_obs(),
                found: factors.len(),
            });
        }
        if factors.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(ZipgError::InvalidData("size factors must be positive".into()));
        }
        self.size_factors = Some(factors);
        Ok(self)
    }

    /// Same design with different counts.
    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.n_obs() {
            return Err(ZipgError::DimensionMismatch {
                matrix: "counts",
                expected: self.n_obs(),
                found: counts.len(),
            });
        }
        let mut out = self.clone();
        out.ln_w_factorial = counts.iter().map(|&w| ln_factorial(w)).collect();
        out.counts = counts;
        Ok(out)
    }

    /// Dataset made of the given observations (with repetition), subjects relabelled
    /// contiguously in order of first appearance.
    pub fn select_observations(&self, rows: &[usize]) -> Result<Self> {
        let mut relabel = vec![usize::MAX; self.n_subjects];
        let mut subject_rows = Vec::new();
        let mut subject_of = Vec::with_capacity(rows.len());
        for &r in rows {
            let s = self.subject_of[r];
            if relabel[s] == usize::MAX {
                relabel[s] = subject_rows.len();
                subject_rows.push(s);
            }
            subject_of.push(relabel[s]);
        }
        self.assemble(rows, subject_of, &subject_rows)
    }

    /// Dataset made of whole subjects (with repetition); each draw becomes a new subject.
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        let members = self.observations_by_subject();
        let mut rows = Vec::new();
        let mut subject_of = Vec::new();
        for (new_label, &s) in subjects.iter().enumerate() {
            for &r in &members[s] {
                rows.push(r);
                subject_of.push(new_label);
            }
        }
        self.assemble(&rows, subject_of, subjects)
    }

    fn assemble(&self, rows: &[usize], subject_of: Vec<usize>, subject_rows: &[usize]) -> Result<Self> {
        let counts = rows.iter().map(|&r| self.counts[r]).collect();
        let depths = rows.iter().map(|&r| self.depths[r]).collect();
        let mut out = Self::new(
            counts,
            depths,
            self.mean_covariates.select_rows(rows),
            self.disp_covariates.select_rows(subject_rows),
            subject_of,
            self.zi_covariates.as_ref().map(|z| z.select_rows(rows)),
        )?;
        if let Some(sf) = &self.size_factors {
            out.size_factors = Some(rows.iter().map(|&r| sf[r]).collect());
        }
        Ok(out)
    }

    pub fn observations_by_subject(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_subjects];
        for (i, &s) in self.subject_of.iter().enumerate() {
            members[s].push(i);
        }
        members
    }

    #[inline]
    pub fn n_obs(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn d1(&self) -> usize {
        self.mean_covariates.ncols()
    }

    pub fn d2(&self) -> usize {
        self.disp_covariates.ncols()
    }

    pub fn d3(&self) -> usize {
        self.zi_covariates.as_ref().map_or(0, |z| z.ncols())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn size_factors(&self) -> Option<&[f64]> {
        self.size_factors.as_deref()
    }

    pub fn mean_covariates(&self) -> &Matrix {
        &self.mean_covariates
    }

    pub fn disp_covariates(&self) -> &Matrix {
        &self.disp_covariates
    }

    pub fn zi_covariates(&self) -> Option<&Matrix> {
        self.zi_covariates.as_ref()
    }

    pub fn subject_of(&self) -> &[usize] {
        &self.subject_of
    }

    /// `ln(W_ij!)` per observation.
    pub(crate) fn ln_w_factorial(&self) -> &[f64] {
        &self.ln_w_factorial
    }

    /// Observed proportion of zero counts.
    pub fn zero_proportion(&self) -> f64 {
        self.counts.iter().filter(|&&w| w == 0).count() as f64 / self.n_obs() as f64
    }

    /// Per-observation offset of the mean model.
    pub fn offsets(&self, mode: OffsetMode) -> Result<Vec<f64>> {
        match mode {
            OffsetMode::LogDepth => Ok(self.depths.iter().map(|m| m.ln()).collect()),
            OffsetMode::LogMedianOfRatios => self
                .size_factors
                .as_ref()
                .map(|sf| sf.iter().map(|s| s.ln()).collect())
                .ok_or_else(|| {
                    ZipgError::InvalidArgument(
                        "median-of-ratios offset requested but the dataset has no size factors".into(),
                    )
                }),
            OffsetMode::None => Ok(vec![0.0; self.n_obs()]),
        }
    }

    /// Checks that covariate widths agree with `spec`.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if self.d1() != spec.d1 {
            return Err(ZipgError::DimensionMismatch {
                matrix: "mean covariates",
                expected: spec.d1,
                found: self.d1(),
            });
        }
        if self.d2() != spec.d2 {
            return Err(ZipgError::DimensionMismatch {
                matrix: "dispersion covariates",
                expected: spec.d2,
                found: self.d2(),
            });
        }
        if spec.variant == Variant::ZipgFull && self.d3() != spec.d3 {
            return Err(ZipgError::DimensionMismatch {
                matrix: "zero-inflation covariates",
                expected: spec.d3,
                found: self.d3(),
            });
        }
        Ok(())
    }
}

/// Natural-scale parameters after applying the link functions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedParams {
    /// Mean abundance per observation.
    pub lambda: Vec<f64>,
    /// Dispersion per subject.
    pub theta: Vec<f64>,
    /// Zero-inflation mass: one value for `zipg`, one per observation for `zipg-full`.
    pub p: Vec<f64>,
}

impl LinkedParams {
    #[inline]
    pub fn p_at(&self, obs: usize) -> f64 {
        if self.p.len() == 1 {
            self.p[0]
        } else {
            self.p[obs]
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-link linear predictors: `η_ij` per observation and `s_i = log θ_i` per subject.
pub(crate) fn linear_predictors(
    x: &[f64],
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    offsets: &[f64],
    eta: &mut Vec<f64>,
    log_theta: &mut Vec<f64>,
) {
    let beta = &x[1..=spec.d1];
    let d = spec.disp_offset();
    let beta_star = &x[d + 1..=d + spec.d2];
    eta.clear();
    eta.extend((0..data.n_obs()).map(|i| x[0] + dot(data.mean_covariates.row(i), beta) + offsets[i]));
    log_theta.clear();
    log_theta.extend((0..data.n_subjects()).map(|s| x[d] + dot(data.disp_covariates.row(s), beta_star)));
}

/// Applies the log links for `λ`, `θ` and the logit link for `p`.
pub fn link_params(omega: &ParamVector, data: &LongitudinalDataset, spec: &ModelSpec) -> Result<LinkedParams> {
    data.check_spec(spec)?;
    omega.check(spec)?;
    let offsets = data.offsets(spec.offset_mode)?;
    let x = omega.to_vec();
    let (mut eta, mut log_theta) = (Vec::new(), Vec::new());
    linear_predictors(&x, data, spec, &offsets, &mut eta, &mut log_theta);
    let p = match spec.variant {
        Variant::Zipg => vec![logistic(omega.gamma[0])],
        Variant::ZipgFull => {
            let z = data.zi_covariates.as_ref().ok_or_else(|| {
                ZipgError::InvalidArgument("zipg-full requires zero-inflation covariates".into())
            })?;
            (0..data.n_obs())
                .map(|i| logistic(omega.gamma[0] + dot(z.row(i), &omega.gamma[1..])))
                .collect()
        }
    };
    Ok(LinkedParams {
        lambda: eta.iter().map(|e| e.exp()).collect(),
        theta: log_theta.iter().map(|s| s.exp()).collect(),
        p,
    })
}

/// `γ = logit(p)`.
pub fn gamma_of_p(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ZipgError::Domain { name: "p", value: p });
    }
    Ok(logit(p))
}

pub fn log_poisson_pmf(w: u64, lambda: f64) -> f64 {
    let wf = w as f64;
    if w == 0 {
        -lambda
    } else {
        wf * lambda.ln() - lambda - ln_factorial(w)
    }
}

/// Log pmf of the Poisson-Gamma law with mean `lambda` and dispersion `theta`.
pub fn log_pg_pmf(w: u64, lambda: f64, theta: f64) -> f64 {
    log_pg_pmf_with_floor(w, lambda, theta, POISSON_FLOOR)
}

pub fn log_pg_pmf_with_floor(w: u64, lambda: f64, theta: f64, floor: f64) -> f64 {
    pg_log_pmf_core(w as f64, ln_factorial(w), lambda.ln(), theta.ln(), floor)
}

/// Log pmf in terms of `η = ln λ` and `s = ln θ`, with `ln(w!)` supplied.
#[inline]
pub(crate) fn pg_log_pmf_core(w: f64, ln_w_fact: f64, eta: f64, s: f64, floor: f64) -> f64 {
    let theta = s.exp();
    let lambda = eta.exp();
    if theta < floor {
        return w * eta - lambda - ln_w_fact;
    }
    let a = 1.0 / theta;
    let lt = lambda * theta;
    let log1p_lt = lt.ln_1p();
    if w == 0.0 {
        return -a * log1p_lt;
    }
    ln_gamma_diff(a, w) - ln_w_fact + w * (eta + s) - (a + w) * log1p_lt
}

/// Mean and variance of the Poisson-Gamma law.
pub fn pg_moments(lambda: f64, theta: f64) -> (f64, f64) {
    (lambda, lambda * (1.0 + lambda * theta))
}
