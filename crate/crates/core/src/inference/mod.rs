//! Hypothesis tests, bootstrap confidence intervals and multiple-testing control.
//!
//! The default path is the bootstrap Wald test: the covariance of the
//! estimator is the sample covariance of refits on resampled (or, for the
//! parametric variant, simulated) datasets. Replicates run in parallel on the
//! current rayon pool and are collected in replicate order, so results do not
//! depend on the number of workers.

mod bootstrap;
mod fdr;
mod gof;
mod interval;

pub use bootstrap::*;
pub use fdr::bh_fdr;
pub use gof::{ks_goodness_of_fit, ks_two_sample};
pub use interval::*;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{constraint_rank, fit, fit_from, fit_restricted, fit_restricted_from, FitResult, FitSettings};
use crate::error::{Result, ZipgError};
use crate::model::{LongitudinalDataset, Matrix, ModelSpec};
use crate::special::chi2_sf;

/// Share of failed replicates above which a report is flagged unreliable.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// `H₀: AΩ = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    a: Matrix,
    b: Vec<f64>,
}

impl LinearHypothesis {
    /// Checks that `A` has full row rank `r < n`.
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        let (r, n) = (a.nrows(), a.ncols());
        if b.len() != r {
            return Err(ZipgError::DimensionMismatch { matrix: "hypothesis right-hand side", expected: r, found: b.len() });
        }
        if r >= n {
            return Err(ZipgError::InvalidHypothesis(format!("{r} restrictions on {n} parameters leave nothing to fit")));
        }
        if a.as_slice().iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(ZipgError::InvalidHypothesis("non-finite entries".into()));
        }
        if r > 0 && constraint_rank(&DMatrix::from_row_slice(r, n, a.as_slice())) < r {
            return Err(ZipgError::InvalidHypothesis("restriction rows are linearly dependent".into()));
        }
        Ok(Self { a, b })
    }

    /// `Ω_j = 0` for every `j` in `indices`.
    pub fn coefficients(n_params: usize, indices: &[usize]) -> Result<Self> {
        let mut a = Matrix::zeros(indices.len(), n_params);
        let mut rows = Vec::with_capacity(indices.len());
        for &j in indices {
            if j >= n_params {
                return Err(ZipgError::InvalidHypothesis(format!("coefficient {j} is out of range")));
            }
            let mut row = vec![0.0; n_params];
            row[j] = 1.0;
            rows.push(row);
        }
        if !rows.is_empty() {
            a = Matrix::from_rows(&rows, n_params)?;
        }
        Self::new(a, vec![0.0; indices.len()])
    }

    /// `Ω_j = value`.
    pub fn coefficient_equals(n_params: usize, j: usize, value: f64) -> Result<Self> {
        let mut h = Self::coefficients(n_params, &[j])?;
        h.b[0] = value;
        Ok(h)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Number of restrictions.
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.a.ncols()
    }

    /// `AΩ − b`.
    pub fn residual(&self, omega: &[f64]) -> Vec<f64> {
        (0..self.rank())
            .map(|r| self.a.row(r).iter().zip(omega).map(|(a, w)| a * w).sum::<f64>() - self.b[r])
            .collect()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.n_params() != spec.n_params() {
            return Err(ZipgError::DimensionMismatch {
                matrix: "hypothesis matrix",
                expected: spec.n_params(),
                found: self.n_params(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    #[serde(rename = "bWald")]
    BootstrapWald,
    #[serde(rename = "pbWald")]
    ParametricBootstrapWald,
    #[serde(rename = "LRT")]
    LikelihoodRatio,
    /// Observed-information Wald test; diagnostics only.
    #[serde(rename = "Wald")]
    Wald,
}

impl TestMethod {
    pub fn label(&self) -> &'static str {
        match self {
            TestMethod::BootstrapWald => "bWald",
            TestMethod::ParametricBootstrapWald => "pbWald",
            TestMethod::LikelihoodRatio => "LRT",
            TestMethod::Wald => "Wald",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub df: usize,
    /// Upper-tail χ²_df probability of `statistic`.
    pub p_value: f64,
    pub method: TestMethod,
    /// Unrestricted estimate the statistic was computed at.
    pub estimate: Vec<f64>,
    /// Full parameter covariance (`None` for likelihood-ratio tests).
    pub covariance: Option<Matrix>,
    pub n_bootstrap: usize,
    pub n_bootstrap_failed: usize,
    /// Too many failed replicates, or a likelihood-ratio fit that could not be repaired.
    pub unreliable: bool,
}

/// `(AΩ̂ − b)ᵀ (A V Aᵀ)⁻¹ (AΩ̂ − b)`.
pub fn wald_statistic(estimate: &[f64], covariance: &Matrix, hypothesis: &LinearHypothesis) -> Result<f64> {
    let (r, n) = (hypothesis.rank(), hypothesis.n_params());
    if estimate.len() != n || covariance.nrows() != n || covariance.ncols() != n {
        return Err(ZipgError::DimensionMismatch { matrix: "covariance", expected: n, found: covariance.nrows() });
    }
    if r == 0 {
        return Ok(0.0);
    }
    let resid = hypothesis.residual(estimate);
    if r == 1 {
        // Scalar path, kept in this form so the test agrees exactly with the normal interval.
        let row = hypothesis.a.row(0);
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += row[i] * covariance.get(i, j) * row[j];
            }
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(ZipgError::SingularCovariance);
        }
        let t = resid[0] / v.sqrt();
        return Ok(t * t);
    }
    let a = DMatrix::from_row_slice(r, n, hypothesis.a.as_slice());
    let v = DMatrix::from_row_slice(n, n, covariance.as_slice());
    let mut avat = &a * v * a.transpose();
    avat = (&avat + avat.transpose()) * 0.5;
    let scale = avat.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let min_eig = avat.clone().symmetric_eigenvalues().min();
    if !(scale > 0.0) || min_eig <= 1e-12 * scale {
        return Err(ZipgError::SingularCovariance);
    }
    let chol = avat.cholesky().ok_or(ZipgError::SingularCovariance)?;
    let d = DVector::from_vec(resid);
    Ok(d.dot(&chol.solve(&d)))
}

/// Wald test from a point estimate and a covariance matrix.
pub fn wald_test(
    estimate: &[f64],
    covariance: &Matrix,
    hypothesis: &LinearHypothesis,
    method: TestMethod,
) -> Result<TestReport> {
    let statistic = wald_statistic(estimate, covariance, hypothesis)?;
    let df = hypothesis.rank();
    Ok(TestReport {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        method,
        estimate: estimate.to_vec(),
        covariance: Some(covariance.clone()),
        n_bootstrap: 0,
        n_bootstrap_failed: 0,
        unreliable: false,
    })
}

/// Wald test with the sample covariance of bootstrap draws.
pub fn wald_from_draws(
    estimate: &[f64],
    draws: &BootstrapDraws,
    hypothesis: &LinearHypothesis,
    method: TestMethod,
) -> Result<TestReport> {
    let mut report = wald_test(estimate, &draws.covariance()?, hypothesis, method)?;
    report.n_bootstrap = draws.requested;
    report.n_bootstrap_failed = draws.failed;
    report.unreliable = draws.unreliable();
    Ok(report)
}

/// Likelihood-ratio test of `hypothesis` against the unrestricted model.
///
/// A full-model likelihood below the null one means an optimization failed;
/// the null is refitted from the full estimate and, if needed, the full model
/// from the null estimate before the report is flagged.
pub fn likelihood_ratio_test(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    hypothesis: &LinearHypothesis,
    settings: &FitSettings,
) -> Result<TestReport> {
    hypothesis.check(spec)?;
    let mut full = fit(data, spec, settings)?;
    let mut null = fit_restricted(data, spec, &hypothesis.a, &hypothesis.b, settings)?;
    let violated = |full: &FitResult, null: &FitResult| full.loglik < null.loglik - 1e-9 * null.loglik.abs();
    if violated(&full, &null) {
        log::warn!("full-model log-likelihood below the null; refitting the null from the full estimate");
        let refit = fit_restricted_from(data, spec, &hypothesis.a, &hypothesis.b, &full.params, settings)?;
        if refit.loglik < null.loglik {
            null = refit;
        }
    }
    if violated(&full, &null) {
        let refit = fit_from(data, spec, &null.params, settings)?;
        if refit.loglik > full.loglik {
            full = refit;
        }
    }
    let statistic = 2.0 * (full.loglik - null.loglik);
    let df = hypothesis.rank();
    Ok(TestReport {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        method: TestMethod::LikelihoodRatio,
        estimate: full.params.to_vec(),
        covariance: None,
        n_bootstrap: 0,
        n_bootstrap_failed: 0,
        unreliable: violated(&full, &null),
    })
}

/// Wald test with the inverse observed information as covariance.
///
/// Tends to understate the variance; exposed for diagnostics only.
#[cfg(feature = "diagnostics")]
pub fn observed_information_wald(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    fit: &FitResult,
    hypothesis: &LinearHypothesis,
) -> Result<TestReport> {
    use crate::likelihood::{e_step, grad_complete_loglik};
    use crate::model::ParamVector;

    hypothesis.check(spec)?;
    // Score of the observed likelihood equals the complete-data gradient at the current responsibilities.
    let score = |x: &[f64]| -> Result<Vec<f64>> {
        let omega = ParamVector::from_slice(spec, x)?;
        let z = e_step(&omega, data, spec)?;
        grad_complete_loglik(&omega, data, &z, spec)
    };
    let x0 = fit.params.to_vec();
    let n = x0.len();
    let mut info = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-5 * x0[j].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let (gp, gm) = (score(&xp)?, score(&xm)?);
        for i in 0..n {
            info[(i, j)] = -(gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let info = (&info + info.transpose()) * 0.5;
    let cov = info.try_inverse().ok_or(ZipgError::SingularCovariance)?;
    let cov = Matrix::new(n, n, cov.transpose().as_slice().to_vec())?;
    wald_test(&x0, &cov, hypothesis, TestMethod::Wald)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag_cov(v: &[f64]) -> Matrix {
        let n = v.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = v[i];
        }
        Matrix::new(n, n, m).unwrap()
    }

    #[test]
    fn hypothesis_rejects_dependent_rows_and_full_rank() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]], 3).unwrap();
        assert!(matches!(LinearHypothesis::new(a, vec![0.0, 0.0]), Err(ZipgError::InvalidHypothesis(_))));
        assert!(LinearHypothesis::coefficients(2, &[0, 1]).is_err());
        assert!(LinearHypothesis::coefficients(3, &[5]).is_err());
    }

    #[test]
    fn single_coefficient_statistic_is_squared_z() {
        let h = LinearHypothesis::coefficients(3, &[1]).unwrap();
        let t = wald_statistic(&[0.3, 0.5, 1.0], &diag_cov(&[1.0, 0.04, 1.0]), &h).unwrap();
        assert_relative_eq!(t, (0.5f64 / 0.2).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn centered_hypothesis_has_zero_statistic() {
        let h = LinearHypothesis::coefficient_equals(3, 1, 0.5).unwrap();
        let r = wald_test(&[0.3, 0.5, 1.0], &diag_cov(&[1.0, 0.04, 1.0]), &h, TestMethod::BootstrapWald).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_restrictions_match_sum_of_squares_for_diagonal_covariance() {
        let h = LinearHypothesis::coefficients(3, &[0, 2]).unwrap();
        let t = wald_statistic(&[1.0, 9.0, -2.0], &diag_cov(&[0.25, 1.0, 4.0]), &h).unwrap();
        assert_relative_eq!(t, 4.0 + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let h = LinearHypothesis::coefficients(2, &[1]).unwrap();
        assert!(matches!(wald_statistic(&[0.0, 1.0], &diag_cov(&[1.0, 0.0]), &h), Err(ZipgError::SingularCovariance)));
        let h = LinearHypothesis::new(Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 3).unwrap(), vec![0.0; 2])
            .unwrap();
        assert!(matches!(
            wald_statistic(&[1.0, 1.0, 1.0], &diag_cov(&[1.0, 0.0, 1.0]), &h),
            Err(ZipgError::SingularCovariance)
        ));
    }
}
