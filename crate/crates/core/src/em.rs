//! Generalized EM fitting of the zero-inflated Poisson-Gamma model.
//!
//! Each iteration runs an E-step (posterior zero-inflation responsibilities)
//! and an M-step that increases the complete-data log-likelihood with BFGS.
//! Restricted fits optimize over an affine subspace `Ω = base + N η`, where
//! the columns of `N` span the null space of the constraint matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZipgError};
use crate::likelihood::{information_criteria_k, ModelEval, Scratch};
use crate::model::{dot, LongitudinalDataset, Matrix, ModelSpec, ParamVector, Variant};
use crate::optimizer::{maximize_with, BfgsSettings};
use crate::special::logit;

/// Floor on the moment-based starting value of `θ`.
pub const OVERDISPERSION_FLOOR: f64 = 1e-3;
const OVERDISPERSION_CEILING: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    /// Maximum number of EM iterations.
    pub t_max: usize,
    /// Relative-change tolerance on the maximized complete-data log-likelihood.
    pub eps_tol: f64,
    pub optimizer: BfgsSettings,
    /// EM iterations of the zero-inflated Poisson fit used for starting values.
    pub init_zip_iterations: usize,
    /// Carry the BFGS inverse Hessian from one M-step to the next.
    pub warm_hessian: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            t_max: 100,
            eps_tol: 1e-8,
            optimizer: BfgsSettings::default(),
            init_zip_iterations: 25,
            warm_hessian: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParamVector,
    /// Observed-data log-likelihood at `params`.
    pub loglik: f64,
    /// Observed-data log-likelihood after the initial E-step and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
    pub bic: f64,
    pub aic: f64,
    /// Flat parameter indices held at zero because their covariate column is constant.
    pub pinned: Vec<usize>,
    /// Final E-step responsibilities.
    pub responsibilities: Vec<f64>,
}

/// Affine parameterization `Ω = base + N η` with orthonormal columns in `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    n: usize,
    k: usize,
    base: Vec<f64>,
    /// Row-major `n × k`.
    basis: Vec<f64>,
}

impl Reparam {
    pub fn identity(n: usize) -> Self {
        let mut basis = vec![0.0; n * n];
        for i in 0..n {
            basis[i * n + i] = 1.0;
        }
        Self { n, k: n, base: vec![0.0; n], basis }
    }

    /// Parameterizes `{Ω : AΩ = b}`. Fails if `A` is rank deficient or the system is inconsistent.
    pub fn from_constraints(a: &Matrix, b: &[f64]) -> Result<Self> {
        let (r, n) = (a.nrows(), a.ncols());
        if b.len() != r {
            return Err(ZipgError::DimensionMismatch { matrix: "hypothesis right-hand side", expected: r, found: b.len() });
        }
        if r == 0 {
            return Ok(Self::identity(n));
        }
        let am = DMatrix::from_row_slice(r, n, a.as_slice());
        if constraint_rank(&am) < r {
            return Err(ZipgError::InvalidHypothesis(format!("constraint matrix has rank below its {r} rows")));
        }
        let svd = am.clone().svd(true, true);
        let base = svd
            .solve(&DVector::from_column_slice(b), 1e-12)
            .map_err(|e| ZipgError::InvalidHypothesis(e.to_string()))?;
        // Null space of A from the eigenvectors of AᵀA with (numerically) zero eigenvalue.
        let eig = SymmetricEigen::new(am.transpose() * &am);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let null: Vec<usize> = order.into_iter().take(n - r).collect();
        debug_assert!(null.iter().all(|&j| eig.eigenvalues[j].abs() <= 1e-9 * scale));
        let k = null.len();
        let mut basis = vec![0.0; n * k];
        for (c, &j) in null.iter().enumerate() {
            for i in 0..n {
                basis[i * k + c] = eig.eigenvectors[(i, j)];
            }
        }
        Ok(Self { n, k, base: base.as_slice().to_vec(), basis })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn to_full(&self, eta: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = self.base[i] + dot(&self.basis[i * self.k..(i + 1) * self.k], eta);
        }
    }

    /// Orthogonal projection of `Ω` onto the subspace, in reduced coordinates.
    pub fn project(&self, omega: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.k];
        for i in 0..self.n {
            let d = omega[i] - self.base[i];
            for (c, e) in eta.iter_mut().enumerate() {
                *e += self.basis[i * self.k + c] * d;
            }
        }
        eta
    }

    fn pull_gradient(&self, g_full: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            for (c, gc) in g.iter_mut().enumerate() {
                *gc += self.basis[i * self.k + c] * g_full[i];
            }
        }
    }
}

pub(crate) fn constraint_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let tol = sv.iter().fold(0.0f64, |m, v| m.max(*v)) * 1e-10 * (a.nrows().max(a.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Starting values from a short zero-inflated Poisson EM and a moment estimate of `θ`.
pub fn initialize(data: &LongitudinalDataset, spec: &ModelSpec) -> Result<ParamVector> {
    initialize_with(data, spec, &FitSettings::default())
}

fn initialize_with(data: &LongitudinalDataset, spec: &ModelSpec, settings: &FitSettings) -> Result<ParamVector> {
    data.check_spec(spec)?;
    let counts = data.counts();
    let total: f64 = counts.iter().map(|&w| w as f64).sum();
    if total == 0.0 {
        return Err(ZipgError::DegenerateTaxon);
    }
    let n = counts.len();
    let offsets = data.offsets(spec.offset_mode)?;
    let x = data.mean_covariates();
    let d1 = spec.d1;

    let exposure: f64 = offsets.iter().map(|o| o.exp()).sum();
    let mut beta = vec![0.0; d1 + 1];
    beta[0] = (total / exposure).ln();
    let p_obs = data.zero_proportion();
    let clamp = 1.0 / (2.0 * n as f64);
    let mut p = p_obs.clamp(clamp, 1.0 - clamp);
    let mut z = vec![0.0; n];
    let eta_of = |b: &[f64], i: usize| b[0] + dot(x.row(i), &b[1..]) + offsets[i];
    let lambda_of = |b: &[f64]| -> Vec<f64> { (0..n).map(|i| eta_of(b, i).exp()).collect() };

    for _ in 0..settings.init_zip_iterations {
        let lambda = lambda_of(&beta);
        for i in 0..n {
            z[i] = if counts[i] == 0 { p / (p + (1.0 - p) * (-lambda[i]).exp()) } else { 0.0 };
        }
        for _ in 0..2 {
            if !poisson_newton_step(&mut beta, &z, counts, x, &offsets) {
                break;
            }
        }
        p = (z.iter().sum::<f64>() / n as f64).clamp(clamp, 1.0 - clamp);
    }

    let lambda = lambda_of(&beta);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let wt = 1.0 - z[i];
        let w = counts[i] as f64;
        num += wt * ((w - lambda[i]).powi(2) - w);
        den += wt * lambda[i] * lambda[i];
    }
    let theta = if den > 0.0 && num.is_finite() { num / den } else { OVERDISPERSION_FLOOR };
    let theta = theta.clamp(OVERDISPERSION_FLOOR, OVERDISPERSION_CEILING);

    let mut omega = ParamVector::zeros(spec);
    omega.beta0 = beta[0];
    omega.beta.copy_from_slice(&beta[1..]);
    omega.beta_star0 = theta.ln();
    omega.gamma[0] = logit(p_obs.clamp(clamp, 1.0 - clamp));
    if !omega.is_finite() {
        return Err(ZipgError::NonFiniteStart);
    }
    Ok(omega)
}

/// One damped Newton step on the weighted Poisson log-likelihood `Σ (1−z)(wη − e^η)`.
/// Returns false once the step no longer changes `beta` appreciably.
fn poisson_newton_step(beta: &mut [f64], z: &[f64], counts: &[u64], x: &Matrix, offsets: &[f64]) -> bool {
    let k = beta.len();
    let value = |b: &[f64]| -> f64 {
        (0..counts.len())
            .map(|i| {
                let eta = b[0] + dot(x.row(i), &b[1..]) + offsets[i];
                (1.0 - z[i]) * (counts[i] as f64 * eta - eta.exp())
            })
            .sum()
    };
    let mut g = DVector::<f64>::zeros(k);
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut row = vec![1.0; k];
    for i in 0..counts.len() {
        let wt = 1.0 - z[i];
        if wt == 0.0 {
            continue;
        }
        row[1..].copy_from_slice(x.row(i));
        let mu = (dot(&row, beta) + offsets[i]).exp();
        let r = wt * (counts[i] as f64 - mu);
        for a in 0..k {
            g[a] += r * row[a];
            for b in 0..=a {
                info[(a, b)] += wt * mu * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
        info[(a, a)] += 1e-10;
    }
    let Some(chol) = info.cholesky() else { return false };
    let step = chol.solve(&g);
    let v0 = value(beta);
    let mut t = 1.0;
    for _ in 0..40 {
        let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
        let v = value(&trial);
        if v.is_finite() && v >= v0 {
            let moved = step.iter().any(|s| (t * s).abs() > 1e-10);
            beta.copy_from_slice(&trial);
            return moved;
        }
        t *= 0.5;
    }
    false
}

/// Flat indices of coefficients whose covariate column has no variation.
pub fn constant_covariate_indices(data: &LongitudinalDataset, spec: &ModelSpec) -> Vec<usize> {
    let constant = |m: &Matrix, j: usize| {
        let col = m.column(j);
        col.iter().all(|&v| v == col[0])
    };
    let mut out = Vec::new();
    for j in 0..spec.d1 {
        if constant(data.mean_covariates(), j) {
            out.push(spec.mean_index(j));
        }
    }
    for j in 0..spec.d2 {
        if constant(data.disp_covariates(), j) {
            out.push(spec.disp_index(j));
        }
    }
    if spec.variant == Variant::ZipgFull {
        if let Some(zx) = data.zi_covariates() {
            for j in 0..spec.d3 {
                if constant(zx, j) {
                    out.push(spec.gamma_index(j));
                }
            }
        }
    }
    out
}

/// Fits the model described by `spec` from the default starting values.
pub fn fit(data: &LongitudinalDataset, spec: &ModelSpec, settings: &FitSettings) -> Result<FitResult> {
    let start = initialize_with(data, spec, settings)?;
    fit_from(data, spec, &start, settings)
}

/// Fits the zero-inflation-covariate variant using every column of the dataset.
pub fn fit_full(data: &LongitudinalDataset, settings: &FitSettings) -> Result<FitResult> {
    fit(data, &ModelSpec::for_dataset(data, Variant::ZipgFull), settings)
}

/// Fits from a given starting point (used to warm-start bootstrap refits).
pub fn fit_from(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    start: &ParamVector,
    settings: &FitSettings,
) -> Result<FitResult> {
    fit_restricted_from(data, spec, &Matrix::zeros(0, spec.n_params()), &[], start, settings)
}

/// Fits under the linear restriction `AΩ = b`.
pub fn fit_restricted(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    a: &Matrix,
    b: &[f64],
    settings: &FitSettings,
) -> Result<FitResult> {
    let start = initialize_with(data, spec, settings)?;
    fit_restricted_from(data, spec, a, b, &start, settings)
}

/// Fits under `AΩ = b` starting from the projection of `start` onto the restriction.
pub fn fit_restricted_from(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    a: &Matrix,
    b: &[f64],
    start: &ParamVector,
    settings: &FitSettings,
) -> Result<FitResult> {
    start.check(spec)?;
    let n = spec.n_params();
    if a.ncols() != n {
        return Err(ZipgError::DimensionMismatch { matrix: "hypothesis matrix", expected: n, found: a.ncols() });
    }
    let pinned = constant_covariate_indices(data, spec);
    let reparam = if a.nrows() == 0 && pinned.is_empty() {
        Reparam::identity(n)
    } else {
        let mut rows: Vec<Vec<f64>> = (0..a.nrows()).map(|r| a.row(r).to_vec()).collect();
        let mut rhs = b.to_vec();
        for &j in &pinned {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            // A pin already implied by the hypothesis would make the system rank deficient.
            if constraint_rank(&DMatrix::from_row_slice(rows.len() + 1, n, &[rows.concat(), row.clone()].concat()))
                > rows.len()
            {
                rows.push(row);
                rhs.push(0.0);
            }
        }
        Reparam::from_constraints(&Matrix::from_rows(&rows, n)?, &rhs)?
    };
    run_em(data, spec, &reparam, &start.to_vec(), settings, pinned)
}

fn run_em(
    data: &LongitudinalDataset,
    spec: &ModelSpec,
    reparam: &Reparam,
    start: &[f64],
    settings: &FitSettings,
    pinned: Vec<usize>,
) -> Result<FitResult> {
    let n = spec.n_params();
    let eval = ModelEval::new(data, spec)?;
    let mut scratch = Scratch::default();
    let mut eta = reparam.project(start);
    let mut x = vec![0.0; n];
    reparam.to_full(&eta, &mut x);

    let mut z = Vec::with_capacity(data.n_obs());
    let mut loglik = eval
        .observed_and_e_step(&x, &mut scratch, Some(&mut z), None)
        .map_err(|_| ZipgError::NonFiniteStart)?;
    let mut trace = vec![loglik];
    let mut q_prev: Option<f64> = None;
    let mut h_warm: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut x_full = vec![0.0; n];
    let mut g_full = vec![0.0; n];

    for t in 1..=settings.t_max {
        iterations = t;
        let res = maximize_with(
            |e, g| {
                reparam.to_full(e, &mut x_full);
                match eval.complete(&x_full, &z, &mut scratch, Some(&mut g_full)) {
                    Ok(v) => {
                        reparam.pull_gradient(&g_full, g);
                        v
                    }
                    Err(_) => f64::NEG_INFINITY,
                }
            },
            &eta,
            &settings.optimizer,
            h_warm.as_deref(),
        )
        .map_err(|_| ZipgError::EmNonFinite { iteration: t })?;
        eta = res.x;
        if settings.warm_hessian {
            h_warm = Some(res.inverse_hessian);
        }
        reparam.to_full(&eta, &mut x);
        loglik = eval
            .observed_and_e_step(&x, &mut scratch, Some(&mut z), None)
            .map_err(|_| ZipgError::EmNonFinite { iteration: t })?;
        trace.push(loglik);
        let q = res.objective;
        if let Some(qp) = q_prev {
            if (q - qp).abs() <= settings.eps_tol * qp.abs() {
                converged = true;
                break;
            }
        }
        q_prev = Some(q);
    }

    let params = ParamVector::from_slice(spec, &x)?;
    let (bic, aic) = information_criteria_k(loglik, n, data.n_obs());
    Ok(FitResult {
        spec: *spec,
        params,
        loglik,
        loglik_trace: trace,
        n_iterations: iterations,
        converged,
        bic,
        aic,
        pinned,
        responsibilities: z,
    })
}
