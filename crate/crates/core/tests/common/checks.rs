//! Property checks with fixed sample sizes, shared by the unit-style property
//! tests and the acceptance run. Each returns a description of the first
//! failure, if any.

use rand::Rng;
use zipg::em::{fit_from, FitSettings};
use zipg::inference::{bh_fdr, confidence_interval, wald_test, IntervalMethod, LinearHypothesis, TestMethod};
use zipg::likelihood::{complete_loglik, e_step, grad_complete_loglik, Responsibilities};
use zipg::model::{log_pg_pmf, LongitudinalDataset, Matrix, ModelSpec, ParamVector};
use zipg::rng::stream;
use zipg::special::logit;

pub type Check = Result<(), String>;

const PROPERTY_SEED: u64 = 0x5EED_0F_CAFE;

pub fn pmf_normalization() -> Check {
    for lambda in [0.1, 1.0, 10.0, 100.0] {
        for theta in [0.01, 0.5, 1.0, 5.0] {
            let mut total = 0.0;
            let mut w = 0u64;
            while total < 1.0 - 1e-10 && w < 10_000_000 {
                total += log_pg_pmf(w, lambda, theta).exp();
                w += 1;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(format!("λ={lambda} θ={theta}: mass {total} after {w} terms"));
            }
        }
    }
    Ok(())
}

/// A small random longitudinal design with one covariate in each sub-model.
pub fn random_dataset<R: Rng>(rng: &mut R, n_subjects: usize, m: usize) -> LongitudinalDataset {
    let n = n_subjects * m;
    let subject_of: Vec<usize> = (0..n).map(|i| i / m).collect();
    let x_subject: Vec<f64> = (0..n_subjects).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let depths: Vec<f64> = (0..n).map(|_| rng.random_range(500.0..5000.0f64).round()).collect();
    let counts: Vec<u64> =
        (0..n).map(|_| if rng.random::<f64>() < 0.4 { 0 } else { rng.random_range(0..40) }).collect();
    LongitudinalDataset::new(
        counts,
        depths,
        Matrix::from_columns(&[x], n).unwrap(),
        Matrix::from_columns(&[x_subject], n_subjects).unwrap(),
        subject_of,
        None,
    )
    .unwrap()
}

/// Ω with θ ∈ [0.05, 5] and p ∈ [0.1, 0.9] at zero covariates.
pub fn random_omega<R: Rng>(rng: &mut R, spec: &ModelSpec) -> ParamVector {
    let mut x = vec![0.0; spec.n_params()];
    x[0] = rng.random_range(-6.0..-3.0);
    for j in 0..spec.d1 {
        x[spec.mean_index(j)] = rng.random_range(-0.5..0.5);
    }
    x[spec.disp_offset()] = rng.random_range(0.05f64..5.0).ln();
    for j in 0..spec.d2 {
        x[spec.disp_index(j)] = rng.random_range(-0.5..0.5);
    }
    x[spec.gamma_offset()] = logit(rng.random_range(0.1..0.9));
    ParamVector::from_slice(spec, &x).unwrap()
}

/// Analytic gradient vs central differences (h = 1e-5), relative error < 1e-4.
///
/// The error is scaled by `max(1, |finite difference|)` so coordinates whose
/// derivative is near zero are compared absolutely.
pub fn gradient_vs_finite_differences(draws: usize) -> Check {
    let mut rng = stream(PROPERTY_SEED, &[1]);
    let spec = ModelSpec::zipg(1, 1);
    for d in 0..draws {
        let data = random_dataset(&mut rng, 4, 5);
        let omega = random_omega(&mut rng, &spec);
        let z = Responsibilities {
            z: data.counts().iter().map(|&w| if w == 0 { rng.random::<f64>() } else { 0.0 }).collect(),
        };
        let g = grad_complete_loglik(&omega, &data, &z, &spec).map_err(|e| e.to_string())?;
        let x = omega.to_vec();
        let h = 1e-5;
        for j in 0..x.len() {
            let eval = |delta: f64| {
                let mut y = x.clone();
                y[j] += delta;
                complete_loglik(&ParamVector::from_slice(&spec, &y).unwrap(), &data, &z, &spec).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (g[j] - fd).abs() / fd.abs().max(1.0);
            if err >= 1e-4 {
                return Err(format!("draw {d}, coordinate {j}: analytic {} vs numeric {fd}", g[j]));
            }
        }
    }
    Ok(())
}

/// Every EM iteration from a random start keeps the observed log-likelihood
/// non-decreasing within 1e-8 (relative to its magnitude).
pub fn em_ascent(starts: usize) -> Check {
    let mut rng = stream(PROPERTY_SEED, &[2]);
    let spec = ModelSpec::zipg(1, 1);
    let settings = FitSettings { t_max: 25, ..FitSettings::default() };
    for s in 0..starts {
        let data = random_dataset(&mut rng, 6, 8);
        let start = random_omega(&mut rng, &spec);
        let res = fit_from(&data, &spec, &start, &settings).map_err(|e| format!("start {s}: {e}"))?;
        for (t, w) in res.loglik_trace.windows(2).enumerate() {
            if w[1] < w[0] - 1e-8 * w[0].abs().max(1.0) {
                return Err(format!("start {s}, iteration {t}: {} -> {}", w[0], w[1]));
            }
        }
    }
    Ok(())
}

/// The normal interval excludes `b` exactly when the single-coefficient Wald p-value is below α.
pub fn wald_interval_consistency(cases: usize) -> Check {
    let mut rng = stream(PROPERTY_SEED, &[3]);
    for c in 0..cases {
        let n = 3;
        let b_draws = 60;
        let center: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spread: f64 = rng.random_range(0.05..1.0);
        let draws: Vec<Vec<f64>> =
            (0..b_draws).map(|_| center.iter().map(|c| c + spread * rng.random_range(-1.0..1.0)).collect()).collect();
        let estimate: Vec<f64> = center.iter().map(|c| c + rng.random_range(-0.8..0.8)).collect();
        let alpha = [0.01, 0.05, 0.1, 0.2][c % 4];
        let j = c % n;
        let null = rng.random_range(-0.5..0.5);
        let boot = zipg::inference::BootstrapDraws { draws, requested: b_draws, failed: 0 };
        let h = LinearHypothesis::coefficient_equals(n, j, null).unwrap();
        let report = wald_test(&estimate, &boot.covariance().unwrap(), &h, TestMethod::BootstrapWald)
            .map_err(|e| e.to_string())?;
        let ci = confidence_interval(estimate[j], &boot.coordinate(j), 1.0 - alpha, IntervalMethod::Normal, None)
            .map_err(|e| e.to_string())?;
        if ci.contains(null) == (report.p_value < alpha) {
            return Err(format!(
                "case {c}: interval [{}, {}] vs null {null}, p = {} at α = {alpha}",
                ci.lower, ci.upper, report.p_value
            ));
        }
    }
    Ok(())
}

/// q-values are monotone in p, bounded by [p, 1], and rejections grow with the level.
pub fn bh_monotonicity(vectors: usize) -> Check {
    let mut rng = stream(PROPERTY_SEED, &[4]);
    for v in 0..vectors {
        let m = rng.random_range(1..200);
        let p: Vec<f64> = (0..m)
            .map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() * 1e-3 } else { rng.random::<f64>() })
            .collect();
        let (rej05, q) = bh_fdr(&p, 0.05);
        let (rej10, _) = bh_fdr(&p, 0.10);
        for i in 0..m {
            if !(q[i] >= p[i] && q[i] <= 1.0) {
                return Err(format!("vector {v}: q[{i}] = {} for p = {}", q[i], p[i]));
            }
            if rej05[i] && !rej10[i] {
                return Err(format!("vector {v}: rejection at 0.05 lost at 0.10"));
            }
            for k in 0..m {
                if p[i] < p[k] && q[i] > q[k] {
                    return Err(format!("vector {v}: p[{i}] < p[{k}] but q[{i}] > q[{k}]"));
                }
            }
        }
    }
    Ok(())
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_workers<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

/// Bootstrap test and a small Monte Carlo run are bit-identical at 1, 2 and 7 workers.
pub fn determinism_across_workers() -> Check {
    use zipg::inference::{bootstrap_wald, BootstrapSettings};
    use zipg::simulation::{run_experiment, ExperimentSettings, ExperimentTest};

    let scenario = super::null_scenario(77);
    let (data, spec) = super::simulate(&scenario, 0);
    let h = LinearHypothesis::coefficients(spec.n_params(), &[spec.mean_index(0)]).unwrap();
    let boot = BootstrapSettings { replicates: 60, seed: 9, ..Default::default() };
    let settings = ExperimentSettings {
        replicates: 4,
        bootstrap: 50,
        tests: vec![ExperimentTest::new(TestMethod::BootstrapWald, "beta:X1")],
        ..Default::default()
    };
    let run = |threads| {
        with_workers(threads, || {
            let report = bootstrap_wald(&data, &spec, &h, &boot).unwrap();
            let summary = run_experiment(&scenario, &settings).unwrap();
            (serde_json::to_string(&report).unwrap(), serde_json::to_string(&summary).unwrap())
        })
    };
    let reference = run(1);
    for threads in [2, 7] {
        if run(threads) != reference {
            return Err(format!("results differ between 1 and {threads} workers"));
        }
    }
    Ok(())
}

pub fn e_step_is_zero_for_positive_counts() -> Check {
    let mut rng = stream(PROPERTY_SEED, &[5]);
    let spec = ModelSpec::zipg(1, 1);
    for _ in 0..20 {
        let data = random_dataset(&mut rng, 3, 4);
        let z = e_step(&random_omega(&mut rng, &spec), &data, &spec).unwrap();
        for (w, z) in data.counts().iter().zip(&z.z) {
            if (*w > 0) != (*z == 0.0) || !(*z < 1.0) {
                return Err(format!("count {w} has responsibility {z}"));
            }
        }
    }
    Ok(())
}
