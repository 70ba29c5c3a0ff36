//! Observed- and complete-data log-likelihoods, E-step responsibilities and
//! the analytic gradient of the complete-data log-likelihood.
//!
//! With `η = log λ`, `s = log θ` and `a = 1/θ`, a single Poisson-Gamma term is
//!
//! ```text
//! ℓ = ln Γ(w + a) − ln Γ(a) − ln w! + w(η + s) − (a + w) ln(1 + λθ)
//! ∂ℓ/∂η = (w − λ) / (1 + λθ)
//! ∂ℓ/∂s = −a [ψ(w + a) − ψ(a) − ln(1 + λθ)] + (w − λ) / (1 + λθ)
//! ```
//!
//! and the chain rule through the linear predictors gives the coefficient
//! gradients. The zero-inflation part contributes `z − p` per observation
//! to the `γ` gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZipgError};
use crate::model::{dot, linear_predictors, LongitudinalDataset, ModelSpec, ParamVector, Variant};
use crate::special::{digamma_diff, ln_1p_pos, ln_gamma_diff, ln_gamma_digamma, log_add_exp, logistic, softplus};

/// Posterior probability that each observation came from the zero-inflation component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodValue {
    pub loglik: f64,
    pub per_observation: Option<Vec<f64>>,
}

/// Log pmf of one Poisson-Gamma term together with its partial derivatives in `η` and `s`.
#[derive(Debug, Clone, Copy)]
struct PgTerm {
    log_pmf: f64,
    d_eta: f64,
    d_log_theta: f64,
}

/// Quantities that depend only on a subject's dispersion.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SubjectTerms {
    log_theta: f64,
    theta: f64,
    a: f64,
    ln_gamma_a: f64,
    digamma_a: f64,
}

impl SubjectTerms {
    fn new(log_theta: f64, floor: f64) -> Self {
        let theta = log_theta.exp();
        let a = 1.0 / theta;
        let (ln_gamma_a, digamma_a) =
            if theta >= floor && a < SMALL_A_DIRECT { ln_gamma_digamma(a) } else { (f64::NAN, f64::NAN) };
        Self { log_theta, theta, a, ln_gamma_a, digamma_a }
    }
}

/// Below this `a = 1/θ` the gamma-function differences are taken directly.
const SMALL_A_DIRECT: f64 = 10.0;

#[inline]
fn pg_term(w: f64, ln_w_fact: f64, eta: f64, sub: &SubjectTerms, floor: f64, with_grad: bool) -> PgTerm {
    let lambda = eta.exp();
    if sub.theta < floor {
        return PgTerm { log_pmf: w * eta - lambda - ln_w_fact, d_eta: w - lambda, d_log_theta: 0.0 };
    }
    let a = sub.a;
    let lt = lambda * sub.theta;
    let log1p_lt = ln_1p_pos(lt);
    if w == 0.0 {
        let log_pmf = -a * log1p_lt;
        if !with_grad {
            return PgTerm { log_pmf, d_eta: 0.0, d_log_theta: 0.0 };
        }
        let d_eta = -lambda / (1.0 + lt);
        return PgTerm { log_pmf, d_eta, d_log_theta: a * log1p_lt + d_eta };
    }
    let small_integer = w <= 8.0;
    let (lg_diff, dg_diff) = if small_integer || a >= SMALL_A_DIRECT {
        (ln_gamma_diff(a, w), if with_grad { digamma_diff(a, w) } else { 0.0 })
    } else {
        let (lg, dg) = ln_gamma_digamma(a + w);
        (lg - sub.ln_gamma_a, dg - sub.digamma_a)
    };
    let log_pmf = lg_diff - ln_w_fact + w * (eta + sub.log_theta) - (a + w) * log1p_lt;
    if !with_grad {
        return PgTerm { log_pmf, d_eta: 0.0, d_log_theta: 0.0 };
    }
    let d_eta = (w - lambda) / (1.0 + lt);
    let d_log_theta = -a * (dg_diff - log1p_lt) + d_eta;
    PgTerm { log_pmf, d_eta, d_log_theta }
}

/// `softplus(±γ)` and `logistic(γ)`, recomputed only when `γ` changes between observations.
struct GammaMemo {
    gamma: f64,
    softplus_pos: f64,
    softplus_neg: f64,
    p: f64,
}

impl GammaMemo {
    fn new() -> Self {
        Self { gamma: f64::NAN, softplus_pos: 0.0, softplus_neg: 0.0, p: 0.0 }
    }

    #[inline]
    fn at(&mut self, gamma: f64) -> &Self {
        if gamma.to_bits() != self.gamma.to_bits() {
            self.gamma = gamma;
            self.softplus_pos = softplus(gamma);
            self.softplus_neg = softplus(-gamma);
            self.p = logistic(gamma);
        }
        self
    }
}

/// Evaluates likelihood quantities on flat parameter slices for one dataset.
///
/// Offsets are resolved once, so repeated evaluations inside the optimizer
/// touch only the linear predictors.
pub(crate) struct ModelEval<'a> {
    data: &'a LongitudinalDataset,
    spec: ModelSpec,
    offsets: Vec<f64>,
}

#[derive(Default)]
pub(crate) struct Scratch {
    eta: Vec<f64>,
    log_theta: Vec<f64>,
    subjects: Vec<SubjectTerms>,
    subject_grad: Vec<f64>,
    /// Per-observation terms (with derivatives) from the last E-step, valid at `cached_at`.
    terms: Vec<PgTerm>,
    cached_at: Vec<f64>,
}

impl Scratch {
    fn refresh_subjects(&mut self, floor: f64) {
        self.subjects.clear();
        self.subjects.extend(self.log_theta.iter().map(|&s| SubjectTerms::new(s, floor)));
    }
}

impl<'a> ModelEval<'a> {
    pub(crate) fn new(data: &'a LongitudinalDataset, spec: &ModelSpec) -> Result<Self> {
        data.check_spec(spec)?;
        let offsets = data.offsets(spec.offset_mode)?;
        Ok(Self { data, spec: *spec, offsets })
    }

    #[inline]
    fn zi_linear(&self, x: &[f64], i: usize) -> f64 {
        let g = self.spec.gamma_offset();
        match self.spec.variant {
            Variant::Zipg => x[g],
            Variant::ZipgFull => match self.data.zi_covariates() {
                Some(z) => x[g] + dot(z.row(i), &x[g + 1..]),
                None => x[g],
            },
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.n_params() {
            return Err(ZipgError::DimensionMismatch {
                matrix: "parameter vector",
                expected: self.spec.n_params(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Observed-data log-likelihood and, in the same pass, E-step responsibilities.
    pub(crate) fn observed_and_e_step(
        &self,
        x: &[f64],
        scratch: &mut Scratch,
        mut z_out: Option<&mut Vec<f64>>,
        mut per_obs: Option<&mut Vec<f64>>,
    ) -> Result<f64> {
        self.check_len(x)?;
        linear_predictors(x, self.data, &self.spec, &self.offsets, &mut scratch.eta, &mut scratch.log_theta);
        scratch.refresh_subjects(self.spec.poisson_floor);
        if let Some(z) = z_out.as_deref_mut() {
            z.clear();
        }
        if let Some(p) = per_obs.as_deref_mut() {
            p.clear();
        }
        let counts = self.data.counts();
        let lnf = self.data.ln_w_factorial();
        let subjects = self.data.subject_of();
        let mut total = 0.0;
        let mut memo = GammaMemo::new();
        scratch.terms.clear();
        scratch.cached_at.clear();
        for i in 0..counts.len() {
            let w = counts[i] as f64;
            let gamma = self.zi_linear(x, i);
            let g = memo.at(gamma);
            let term = pg_term(w, lnf[i], scratch.eta[i], &scratch.subjects[subjects[i]], self.spec.poisson_floor, true);
            scratch.terms.push(term);
            let (contrib, zi) = if counts[i] == 0 {
                let mix = log_add_exp(gamma, term.log_pmf);
                (mix - g.softplus_pos, (gamma - mix).exp())
            } else {
                (term.log_pmf - g.softplus_pos, 0.0)
            };
            if !contrib.is_finite() {
                return Err(ZipgError::NonFiniteLikelihood { index: i });
            }
            total += contrib;
            if let Some(z) = z_out.as_deref_mut() {
                z.push(zi);
            }
            if let Some(p) = per_obs.as_deref_mut() {
                p.push(contrib);
            }
        }
        scratch.cached_at.extend_from_slice(x);
        Ok(total)
    }

    /// Complete-data log-likelihood; fills `grad` when given.
    pub(crate) fn complete(&self, x: &[f64], z: &[f64], scratch: &mut Scratch, grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_len(x)?;
        let spec = &self.spec;
        let with_grad = grad.is_some();
        let cached = scratch.cached_at.as_slice() == x && scratch.terms.len() == self.data.n_obs();
        if !cached {
            linear_predictors(x, self.data, spec, &self.offsets, &mut scratch.eta, &mut scratch.log_theta);
            scratch.refresh_subjects(spec.poisson_floor);
        }
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
            scratch.subject_grad.clear();
            scratch.subject_grad.resize(self.data.n_subjects(), 0.0);
        }
        let counts = self.data.counts();
        let lnf = self.data.ln_w_factorial();
        let subjects = self.data.subject_of();
        let mean_x = self.data.mean_covariates();
        let zi_x = self.data.zi_covariates();
        let g_off = spec.gamma_offset();
        let mut total = 0.0;
        let mut memo = GammaMemo::new();
        for i in 0..counts.len() {
            let zi = z[i];
            let zg = memo.at(self.zi_linear(x, i));
            let mut contrib = 0.0;
            if zi > 0.0 {
                contrib += -zi * zg.softplus_neg;
            }
            let weight = 1.0 - zi;
            let mut term = None;
            if weight > 0.0 {
                let t = if cached {
                    scratch.terms[i]
                } else {
                    pg_term(
                        counts[i] as f64,
                        lnf[i],
                        scratch.eta[i],
                        &scratch.subjects[subjects[i]],
                        spec.poisson_floor,
                        with_grad,
                    )
                };
                contrib += weight * (t.log_pmf - zg.softplus_pos);
                term = Some(t);
            }
            if !contrib.is_finite() {
                return Err(ZipgError::NonFiniteLikelihood { index: i });
            }
            total += contrib;
            if let Some(g) = grad.as_deref_mut() {
                if let Some(t) = term {
                    let de = weight * t.d_eta;
                    g[0] += de;
                    for (gj, xj) in g[1..=spec.d1].iter_mut().zip(mean_x.row(i)) {
                        *gj += de * xj;
                    }
                    scratch.subject_grad[subjects[i]] += weight * t.d_log_theta;
                }
                let dg = zi - zg.p;
                g[g_off] += dg;
                if spec.variant == Variant::ZipgFull {
                    if let Some(zx) = zi_x {
                        for (gk, zk) in g[g_off + 1..].iter_mut().zip(zx.row(i)) {
                            *gk += dg * zk;
                        }
                    }
                }
            }
        }
        if let Some(g) = grad {
            let d = spec.disp_offset();
            let disp_x = self.data.disp_covariates();
            for (s, &gs) in scratch.subject_grad.iter().enumerate() {
                g[d] += gs;
                for (gj, xj) in g[d + 1..=d + spec.d2].iter_mut().zip(disp_x.row(s)) {
                    *gj += gs * xj;
                }
            }
        }
        Ok(total)
    }
}

fn check_responsibilities(z: &Responsibilities, data: &LongitudinalDataset) -> Result<()> {
    if z.z.len() != data.n_obs() {
        return Err(ZipgError::DimensionMismatch {
            matrix: "responsibilities",
            expected: data.n_obs(),
            found: z.z.len(),
        });
    }
    if let Some(i) = z.z.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(ZipgError::InvalidArgument(format!("responsibility {i} is outside [0, 1]")));
    }
    Ok(())
}

/// Observed-data log-likelihood, with per-observation contributions.
pub fn observed_loglik(omega: &ParamVector, data: &LongitudinalDataset, spec: &ModelSpec) -> Result<LikelihoodValue> {
    omega.check(spec)?;
    let eval = ModelEval::new(data, spec)?;
    let mut per_obs = Vec::with_capacity(data.n_obs());
    let loglik = eval.observed_and_e_step(&omega.to_vec(), &mut Scratch::default(), None, Some(&mut per_obs))?;
    Ok(LikelihoodValue { loglik, per_observation: Some(per_obs) })
}

/// Complete-data log-likelihood given responsibilities `z`.
pub fn complete_loglik(
    omega: &ParamVector,
    data: &LongitudinalDataset,
    z: &Responsibilities,
    spec: &ModelSpec,
) -> Result<f64> {
    omega.check(spec)?;
    check_responsibilities(z, data)?;
    ModelEval::new(data, spec)?.complete(&omega.to_vec(), &z.z, &mut Scratch::default(), None)
}

/// E-step: posterior zero-inflation responsibilities, evaluated in log space.
pub fn e_step(omega: &ParamVector, data: &LongitudinalDataset, spec: &ModelSpec) -> Result<Responsibilities> {
    omega.check(spec)?;
    let eval = ModelEval::new(data, spec)?;
    let mut z = Vec::with_capacity(data.n_obs());
    eval.observed_and_e_step(&omega.to_vec(), &mut Scratch::default(), Some(&mut z), None)?;
    Ok(Responsibilities { z })
}

/// Analytic gradient of [`complete_loglik`] in unconstrained coordinates.
pub fn grad_complete_loglik(
    omega: &ParamVector,
    data: &LongitudinalDataset,
    z: &Responsibilities,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    omega.check(spec)?;
    check_responsibilities(z, data)?;
    let mut grad = vec![0.0; spec.n_params()];
    ModelEval::new(data, spec)?.complete(&omega.to_vec(), &z.z, &mut Scratch::default(), Some(&mut grad))?;
    Ok(grad)
}

/// `(BIC, AIC)` with `k = |Ω|` free parameters.
pub fn information_criteria(loglik: f64, omega: &ParamVector, n_obs: usize) -> (f64, f64) {
    information_criteria_k(loglik, omega.len(), n_obs)
}

pub fn information_criteria_k(loglik: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (-2.0 * loglik + k * (n_obs as f64).ln(), -2.0 * loglik + 2.0 * k)
}
