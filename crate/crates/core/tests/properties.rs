mod common;

use common::checks;
use proptest::prelude::*;
use zipg::inference::{bh_fdr, ks_two_sample, wald_statistic, BootstrapDraws, LinearHypothesis};
use zipg::likelihood::{complete_loglik, observed_loglik, Responsibilities};
use zipg::model::{gamma_of_p, log_pg_pmf, log_poisson_pmf, Matrix, ModelSpec, ParamVector};
use zipg::rng::stream;
use zipg::special::logistic;

fn ok(c: checks::Check) {
    if let Err(msg) = c {
        panic!("{msg}");
    }
}

#[test]
fn pmf_normalizes_on_grid() {
    ok(checks::pmf_normalization());
}

#[test]
fn gradient_matches_finite_differences() {
    ok(checks::gradient_vs_finite_differences(50));
}

#[test]
fn em_never_descends() {
    ok(checks::em_ascent(100));
}

#[test]
fn wald_and_interval_agree() {
    ok(checks::wald_interval_consistency(2000));
}

#[test]
fn bh_is_monotone() {
    ok(checks::bh_monotonicity(1000));
}

#[test]
fn reruns_are_bit_identical_at_any_worker_count() {
    ok(checks::determinism_across_workers());
}

#[test]
fn responsibilities_vanish_for_positive_counts() {
    ok(checks::e_step_is_zero_for_positive_counts());
}

#[test]
fn hierarchical_sampling_matches_moments() {
    use rand_distr::{Distribution, Gamma, Poisson};
    let mut rng = stream(11, &[0]);
    let n = 100_000;
    for (lambda, theta) in [(2.0, 3.0), (1.0, 1.0), (15.0, 0.2)] {
        let g = Gamma::new(1.0 / theta, theta).unwrap();
        let w: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = g.sample(&mut rng);
                if u * lambda > 0.0 {
                    Poisson::new(lambda * u).unwrap().sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m, v) = zipg::model::pg_moments(lambda, theta);
        assert!((mean - m).abs() < 4.0 * (v / n as f64).sqrt(), "mean {mean} vs {m}");
        // SE of the sample variance from the fourth central moment.
        let m4 = w.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - v).abs() < 4.0 * se_var, "variance {var} vs {v}");
    }
}

#[test]
fn poisson_limit_is_continuous() {
    for lambda in [0.5, 3.0, 40.0, 100.0] {
        for w in (0..=1000).step_by(7) {
            let a = log_pg_pmf(w, lambda, 1e-10);
            let b = log_poisson_pmf(w, lambda);
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "w={w} λ={lambda}: {a} vs {b}");
        }
    }
}

fn dataset_from(counts: Vec<u64>, x: Vec<f64>, xs: Vec<f64>, m: usize) -> zipg::model::LongitudinalDataset {
    let n = counts.len();
    let subjects = xs.len();
    zipg::model::LongitudinalDataset::new(
        counts,
        (0..n).map(|i| 1000.0 + 37.0 * i as f64).collect(),
        Matrix::from_columns(&[x], n).unwrap(),
        Matrix::from_columns(&[xs], subjects).unwrap(),
        (0..n).map(|i| i / m).collect(),
        None,
    )
    .unwrap()
}

fn small_dataset() -> impl Strategy<Value = (Vec<u64>, Vec<f64>, Vec<f64>)> {
    (2usize..5, 2usize..5).prop_flat_map(|(s, m)| {
        (
            prop::collection::vec(prop_oneof![Just(0u64), 0u64..60], s * m),
            prop::collection::vec(-1.0f64..1.0, s * m),
            prop::collection::vec(-1.0f64..1.0, s),
        )
    })
}

fn omega_strategy() -> impl Strategy<Value = Vec<f64>> {
    (-6.0f64..-2.0, -0.5f64..0.5, (0.05f64..5.0).prop_map(f64::ln), -0.5f64..0.5, -2.2f64..2.2)
        .prop_map(|(a, b, c, d, e)| vec![a, b, c, d, e])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logistic_inverts_gamma_of_p(p in 1e-6f64..(1.0 - 1e-6)) {
        let back = logistic(gamma_of_p(p).unwrap());
        prop_assert!((back - p).abs() <= 1e-12 * p.max(1e-3).max(1.0 - p), "{p} -> {back}");
    }

    #[test]
    fn loglik_is_sum_of_terms_and_permutation_invariant(
        (counts, x, xs) in small_dataset(), omega in omega_strategy(), seed in any::<u64>()
    ) {
        let m = counts.len() / xs.len();
        let data = dataset_from(counts, x, xs, m);
        let spec = ModelSpec::zipg(1, 1);
        let om = ParamVector::from_slice(&spec, &omega).unwrap();
        let v = observed_loglik(&om, &data, &spec).unwrap();
        let per = v.per_observation.clone().unwrap();
        prop_assert!((per.iter().sum::<f64>() - v.loglik).abs() < 1e-9 * v.loglik.abs().max(1.0));

        use rand::seq::SliceRandom;
        let mut rows: Vec<usize> = (0..data.n_obs()).collect();
        rows.shuffle(&mut stream(seed, &[0]));
        let shuffled = data.select_observations(&rows).unwrap();
        let w = observed_loglik(&om, &shuffled, &spec).unwrap().loglik;
        prop_assert!((w - v.loglik).abs() < 1e-10 * v.loglik.abs().max(1.0));
    }

    #[test]
    fn complete_loglik_decomposes_for_pg_observations(
        (counts, x, xs) in small_dataset(), omega in omega_strategy()
    ) {
        let m = counts.len() / xs.len();
        let data = dataset_from(counts, x, xs, m);
        let spec = ModelSpec::zipg(1, 1);
        let om = ParamVector::from_slice(&spec, &omega).unwrap();
        let z = Responsibilities { z: vec![0.0; data.n_obs()] };
        let linked = zipg::model::link_params(&om, &data, &spec).unwrap();
        let p = logistic(omega[4]);
        let expected: f64 = (0..data.n_obs())
            .map(|i| (1.0 - p).ln() + log_pg_pmf(data.counts()[i], linked.lambda[i], linked.theta[data.subject_of()[i]]))
            .sum();
        let got = complete_loglik(&om, &data, &z, &spec).unwrap();
        prop_assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn wald_invariant_to_row_transformations(
        est in prop::collection::vec(-2.0f64..2.0, 4),
        draws in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 12),
        r in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let cov = BootstrapDraws { draws, requested: 12, failed: 0 }.covariance().unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 0.0, -1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]], 4).unwrap();
        let b = vec![0.3, -0.2];
        // R = [[r0, r1], [r2, r3]], kept well-conditioned.
        let det = r[0] * r[3] - r[1] * r[2];
        prop_assume!(det.abs() > 0.2);
        let ra = Matrix::from_rows(&[
            (0..4).map(|j| r[0] * a.get(0, j) + r[1] * a.get(1, j)).collect(),
            (0..4).map(|j| r[2] * a.get(0, j) + r[3] * a.get(1, j)).collect(),
        ], 4).unwrap();
        let rb = vec![r[0] * b[0] + r[1] * b[1], r[2] * b[0] + r[3] * b[1]];
        let t1 = wald_statistic(&est, &cov, &LinearHypothesis::new(a, b).unwrap());
        let t2 = wald_statistic(&est, &cov, &LinearHypothesis::new(ra, rb).unwrap());
        match (t1, t2) {
            (Ok(t1), Ok(t2)) => prop_assert!((t1 - t2).abs() <= 1e-8 * t1.abs().max(1.0), "{t1} vs {t2}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "inconsistent outcomes {a:?} / {b:?}"),
        }
    }

    #[test]
    fn bootstrap_covariance_is_psd(
        draws in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40),
        v in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let n = draws.len();
        let cov = BootstrapDraws { draws, requested: n, failed: 0 }.covariance().unwrap();
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += v[i] * cov.get(i, j) * v[j];
            }
        }
        prop_assert!(q >= -1e-10);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(cov.get(i, j), cov.get(j, i));
            }
        }
    }

    #[test]
    fn bh_qvalues_are_ordered(p in prop::collection::vec(0.0f64..1.0, 1..100)) {
        let (_, q) = bh_fdr(&p, 0.05);
        for i in 0..p.len() {
            prop_assert!(q[i] >= p[i] && q[i] <= 1.0);
            for k in 0..p.len() {
                if p[i] <= p[k] {
                    prop_assert!(q[i] <= q[k]);
                }
            }
        }
    }

    #[test]
    fn ks_of_a_sample_with_itself_is_zero(x in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        let (d, p) = ks_two_sample(&x, &x);
        prop_assert_eq!(d, 0.0);
        prop_assert_eq!(p, 1.0);
    }
}
