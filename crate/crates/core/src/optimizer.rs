//! BFGS maximization with a strong-Wolfe line search.
//!
//! Internally the negated objective is minimized. The inverse-Hessian
//! approximation can be handed back in to warm-start a related problem, which
//! is how successive EM M-steps reuse curvature information.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZipgError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsSettings {
    /// Converged once the ∞-norm of the gradient drops below this.
    pub gtol: f64,
    /// Stop (unconverged) when the relative objective change falls below this.
    pub ftol_rel: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { gtol: 1e-6, ftol_rel: 1e-10, max_iter: 200, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ObjectiveStalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    /// Objective value at `x` (the maximized quantity, not its negation).
    pub objective: f64,
    pub n_iterations: usize,
    pub n_evaluations: usize,
    /// ∞-norm of the gradient at `x`.
    pub gradient_norm: f64,
    /// True only when the gradient tolerance was met.
    pub converged: bool,
    pub reason: StopReason,
    /// Row-major inverse-Hessian approximation of the negated objective.
    pub inverse_hessian: Vec<f64>,
}

/// Maximizes `objective` from `start` using separately supplied value and gradient.
pub fn maximize<F, G>(mut objective: F, mut gradient: G, start: &[f64], settings: &BfgsSettings) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    maximize_with(
        |x, g| {
            let v = objective(x);
            if v.is_finite() {
                g.copy_from_slice(&gradient(x));
            }
            v
        },
        start,
        settings,
        None,
    )
}

#[derive(Clone)]
struct Trial {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

impl Trial {
    fn ok(&self) -> bool {
        self.f.is_finite() && self.d.is_finite()
    }
}

struct Problem<'a, FG> {
    fg: FG,
    settings: &'a BfgsSettings,
    evaluations: usize,
}

impl<FG: FnMut(&[f64], &mut [f64]) -> f64> Problem<'_, FG> {
    /// Negated objective and gradient; non-finite values map to +∞.
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.fg)(x, g);
        if !v.is_finite() || g.iter().any(|gi| !gi.is_finite()) {
            return f64::INFINITY;
        }
        g.iter_mut().for_each(|gi| *gi = -*gi);
        -v
    }

    fn trial(&mut self, x0: &[f64], p: &[f64], alpha: f64) -> Trial {
        let x: Vec<f64> = x0.iter().zip(p).map(|(xi, pi)| xi + alpha * pi).collect();
        let mut g = vec![0.0; x.len()];
        let f = self.eval(&x, &mut g);
        let d = if f.is_finite() { dot(&g, p) } else { f64::NAN };
        Trial { alpha, f, d, x, g }
    }

    /// Strong-Wolfe line search followed by a secant refinement of the step.
    fn line_search(&mut self, start: &Trial, p: &[f64]) -> Option<Trial> {
        let s = self.settings;
        let (f0, d0) = (start.f, start.d);
        let armijo = |t: &Trial| t.ok() && t.f <= f0 + s.c1 * t.alpha * d0;
        let curvature = |t: &Trial| t.d.abs() <= -s.c2 * d0;

        let mut prev = start.clone();
        prev.alpha = 0.0;
        let mut alpha = 1.0;
        let mut accepted = None;
        for i in 0..s.max_line_search {
            let t = self.trial(&start.x, p, alpha);
            if !t.ok() {
                alpha = prev.alpha + 0.25 * (alpha - prev.alpha);
                continue;
            }
            if !armijo(&t) || (i > 0 && t.f >= prev.f) {
                accepted = self.zoom(start, p, prev, t);
                break;
            }
            if curvature(&t) {
                accepted = Some(t);
                break;
            }
            if t.d >= 0.0 {
                accepted = self.zoom(start, p, t, prev);
                break;
            }
            prev = t;
            alpha *= 2.0;
        }
        let t = accepted?;

        // On a quadratic the secant step is exact, giving finite termination.
        if t.d.abs() > 0.01 * d0.abs() && d0 - t.d < 0.0 {
            let aq = t.alpha * d0 / (d0 - t.d);
            if aq.is_finite() && aq > 0.0 && aq != t.alpha {
                let q = self.trial(&start.x, p, aq);
                if armijo(&q) && curvature(&q) && q.f <= t.f {
                    return Some(q);
                }
            }
        }
        Some(t)
    }

    fn zoom(&mut self, start: &Trial, p: &[f64], mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        let s = self.settings;
        let (f0, d0) = (start.f, start.d);
        for _ in 0..s.max_line_search {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-14 * b.max(1e-300) {
                break;
            }
            // Values indistinguishable at rounding level: further bisection is noise.
            if hi.ok() && (lo.f - hi.f).abs() <= noise_level(s, f0) {
                break;
            }
            let mut alpha = if hi.ok() { cubic_min(&lo, &hi) } else { f64::NAN };
            if !alpha.is_finite() || alpha < a + 0.1 * width || alpha > b - 0.1 * width {
                alpha = 0.5 * (lo.alpha + hi.alpha);
            }
            let t = self.trial(&start.x, p, alpha);
            if !t.ok() || t.f > f0 + s.c1 * alpha * d0 || t.f >= lo.f {
                hi = t;
            } else {
                if t.d.abs() <= -s.c2 * d0 {
                    return Some(t);
                }
                if t.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        // `lo` always satisfies sufficient decrease; take it if it moved.
        (lo.alpha > 0.0).then_some(lo)
    }
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_min(lo: &Trial, hi: &Trial) -> f64 {
    let (a0, a1) = (lo.alpha, hi.alpha);
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a0 - a1);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    a1 - (a1 - a0) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2)
}

/// Objective changes below this are treated as rounding noise.
fn noise_level(settings: &BfgsSettings, f: f64) -> f64 {
    (1e-3 * settings.ftol_rel).max(4.0 * f64::EPSILON) * f.abs().max(1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn scaled_identity(n: usize, scale: f64) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = scale;
    }
    h
}

/// Maximizes a fused value-and-gradient function.
///
/// `fg(x, grad)` returns the objective at `x` and writes its gradient into
/// `grad`. A non-finite return value marks `x` as infeasible; the line search
/// then backs off. `warm_h`, when given, seeds the inverse Hessian (of the
/// negated objective) instead of a scaled identity.
pub fn maximize_with<FG>(fg: FG, start: &[f64], settings: &BfgsSettings, warm_h: Option<&[f64]>) -> Result<OptimResult>
where
    FG: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = start.len();
    let mut prob = Problem { fg, settings, evaluations: 0 };
    let mut g0 = vec![0.0; n];
    let f0 = prob.eval(start, &mut g0);
    if !f0.is_finite() || start.iter().any(|v| !v.is_finite()) {
        return Err(ZipgError::NonFiniteStart);
    }
    let mut cur = Trial { alpha: 0.0, f: f0, d: 0.0, x: start.to_vec(), g: g0 };

    let cold_h = |g: &[f64]| scaled_identity(n, 1.0 / (1.0 + inf_norm(g)));
    let mut cold = true;
    let mut h = match warm_h {
        Some(w) if w.len() == n * n && w.iter().all(|v| v.is_finite()) => {
            cold = false;
            w.to_vec()
        }
        _ => cold_h(&cur.g),
    };

    let finish = |cur: Trial, h: Vec<f64>, iters: usize, evals: usize, reason: StopReason| OptimResult {
        gradient_norm: inf_norm(&cur.g),
        objective: -cur.f,
        x: cur.x,
        n_iterations: iters,
        n_evaluations: evals,
        converged: reason == StopReason::GradientTolerance,
        reason,
        inverse_hessian: h,
    };

    let mut reset_used = false;
    let mut p = vec![0.0; n];
    for iter in 0..settings.max_iter {
        if inf_norm(&cur.g) < settings.gtol {
            return Ok(finish(cur, h, iter, prob.evaluations, StopReason::GradientTolerance));
        }
        for i in 0..n {
            p[i] = -dot(&h[i * n..(i + 1) * n], &cur.g);
        }
        cur.d = dot(&cur.g, &p);
        if !(cur.d < 0.0) {
            h = cold_h(&cur.g);
            cold = true;
            for i in 0..n {
                p[i] = -h[i * n + i] * cur.g[i];
            }
            cur.d = dot(&cur.g, &p);
        }
        // Predicted improvement below rounding of the objective itself.
        if -cur.d <= noise_level(settings, cur.f) {
            return Ok(finish(cur, h, iter, prob.evaluations, StopReason::ObjectiveStalled));
        }
        let next = match prob.line_search(&cur, &p) {
            Some(t) => t,
            None if !reset_used => {
                reset_used = true;
                h = cold_h(&cur.g);
                cold = true;
                continue;
            }
            None => return Ok(finish(cur, h, iter, prob.evaluations, StopReason::LineSearchFailed)),
        };

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if cold {
                // Rescale the initial guess to the observed curvature.
                let scale = sy / dot(&y, &y);
                h = scaled_identity(n, scale);
                cold = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        let f_prev = cur.f;
        cur = next;
        if inf_norm(&cur.g) < settings.gtol {
            return Ok(finish(cur, h, iter + 1, prob.evaluations, StopReason::GradientTolerance));
        }
        if (f_prev - cur.f).abs() <= settings.ftol_rel * f_prev.abs().max(1.0) {
            return Ok(finish(cur, h, iter + 1, prob.evaluations, StopReason::ObjectiveStalled));
        }
    }
    Ok(finish(cur, h, settings.max_iter, prob.evaluations, StopReason::MaxIterations))
}

/// H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ with ρ = 1/(sᵀy).
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn neg_rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
        g[1] = -(200.0 * (b - a * a));
        -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    #[test]
    fn rosenbrock_converges() {
        let r = maximize_with(neg_rosenbrock, &[-1.2, 1.0], &BfgsSettings::default(), None).unwrap();
        assert!(r.converged, "{r:?}");
        assert_eq!(r.reason, StopReason::GradientTolerance);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-5);
        assert!(r.gradient_norm < 1e-6);
    }

    #[test]
    fn separate_closures_match_fused() {
        let obj = |x: &[f64]| -(x[0] - 3.0).powi(2) - 2.0 * (x[1] + 1.0).powi(2);
        let grad = |x: &[f64]| vec![-2.0 * (x[0] - 3.0), -4.0 * (x[1] + 1.0)];
        let r = maximize(obj, grad, &[0.0, 0.0], &BfgsSettings::default()).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 3.0, epsilon = 1e-7);
        assert_relative_eq!(r.x[1], -1.0, epsilon = 1e-7);
        assert_relative_eq!(r.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_terminates_within_dimension_plus_two() {
        // f(x) = -½ xᵀAx + bᵀx with an ill-conditioned SPD A.
        let n = 6;
        let a: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i == j {
                    10f64.powi(i as i32 - 2) + 1.0
                } else {
                    0.3 / (1.0 + (i as f64 - j as f64).abs())
                }
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64) - 2.5).collect();
        let fg = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
                g[i] = b[i] - ax;
                v += b[i] * x[i] - 0.5 * x[i] * ax;
            }
            v
        };
        let r = maximize_with(fg, &vec![0.0; n], &BfgsSettings::default(), None).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.n_iterations <= n + 2, "took {} iterations", r.n_iterations);
    }

    #[test]
    fn start_at_optimum_needs_no_iterations() {
        let r = maximize_with(
            |x, g| {
                g[0] = -x[0];
                -0.5 * x[0] * x[0]
            },
            &[0.0],
            &BfgsSettings::default(),
            None,
        )
        .unwrap();
        assert_eq!(r.n_iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let err = maximize_with(|_, _| f64::NAN, &[1.0], &BfgsSettings::default(), None).unwrap_err();
        assert!(matches!(err, ZipgError::NonFiniteStart));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // log-barrier: defined only for x > 0, maximum at x = 1.
        let fg = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            g[0] = 1.0 / x[0] - 1.0;
            x[0].ln() - x[0]
        };
        let r = maximize_with(fg, &[20.0], &BfgsSettings::default(), None).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn warm_start_reuses_curvature() {
        let settings = BfgsSettings::default();
        let cold = maximize_with(neg_rosenbrock, &[-1.2, 1.0], &settings, None).unwrap();
        let warm = maximize_with(neg_rosenbrock, &[0.99, 0.98], &settings, Some(&cold.inverse_hessian)).unwrap();
        let fresh = maximize_with(neg_rosenbrock, &[0.99, 0.98], &settings, None).unwrap();
        assert!(warm.converged);
        assert!(warm.n_evaluations <= fresh.n_evaluations, "{} vs {}", warm.n_evaluations, fresh.n_evaluations);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let settings = BfgsSettings { max_iter: 2, ..Default::default() };
        let r = maximize_with(neg_rosenbrock, &[-1.2, 1.0], &settings, None).unwrap();
        assert_eq!(r.reason, StopReason::MaxIterations);
        assert!(!r.converged);
    }
}
