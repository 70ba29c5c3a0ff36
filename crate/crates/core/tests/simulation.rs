mod common;

use std::path::PathBuf;

use zipg::em::FitSettings;
use zipg::inference::TestMethod;
use zipg::simulation::{
    run_experiment, sensitivity_bic_experiment, DepthModel, ExperimentFile, ExperimentSettings, ExperimentTest,
    ScenarioConfig,
};

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_scenarios_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let file = ExperimentFile::from_toml_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!file.experiment.tests.is_empty(), "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn null_scenario_file_matches_built_in_design() {
    let file = ExperimentFile::from_toml_file(&scenarios_dir().join("null_n500.toml")).unwrap();
    assert_eq!(file.scenario, ScenarioConfig { seed: 20240501, ..ScenarioConfig::null_design() });
    assert_eq!((file.experiment.replicates, file.experiment.bootstrap), (200, 200));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[scenario]\nn_subjects = 2\nn_measurements = 2\nbeta0 = 0\nbeta_star0 = 0\np = 0.5\nbogus = 1\n")
        .unwrap();
    assert!(matches!(ExperimentFile::from_toml_file(&path), Err(zipg::ZipgError::Config(_))));
}

#[test]
fn empirical_depths_load_relative_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("depths.txt"), "1000\n2500\n4000\n").unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        "[scenario]\nn_subjects = 4\nn_measurements = 3\nbeta0 = -3\nbeta_star0 = 0\np = 0.3\n\
         [scenario.depth_model]\nkind = \"empirical\"\npath = \"depths.txt\"\n",
    )
    .unwrap();
    let file = ExperimentFile::from_toml_file(&path).unwrap();
    let (data, _) = common::simulate(&file.scenario, 0);
    assert!(data.depths().iter().all(|d| [1000.0, 2500.0, 4000.0].contains(d)));
    assert!(matches!(file.scenario.depth_model, DepthModel::Empirical { .. }));
}

fn mean_zero_fraction(scenario: &ScenarioConfig) -> f64 {
    (0..20).map(|k| common::simulate(scenario, k).0.zero_proportion()).sum::<f64>() / 20.0
}

#[test]
fn zero_fraction_falls_with_mean_effect() {
    let fracs: Vec<f64> = [0.0, 1.0, 2.0]
        .iter()
        .map(|&b1| mean_zero_fraction(&ScenarioConfig { beta: vec![b1, 0.45], ..common::null_scenario(301) }))
        .collect();
    assert!(fracs[0] > fracs[1] && fracs[1] > fracs[2], "{fracs:?}");
}

#[test]
fn zero_fraction_rises_with_dispersion_effect() {
    let fracs: Vec<f64> = [0.0, 1.0, 2.0]
        .iter()
        .map(|&b| mean_zero_fraction(&ScenarioConfig { beta_star: vec![b], ..common::null_scenario(302) }))
        .collect();
    assert!(fracs[0] < fracs[1] && fracs[1] < fracs[2], "{fracs:?}");
}

#[test]
fn small_experiment_summary_is_consistent() {
    let scenario = common::null_scenario(303);
    let settings = ExperimentSettings {
        replicates: 6,
        bootstrap: 50,
        tests: vec![
            ExperimentTest::new(TestMethod::BootstrapWald, "beta:X1"),
            ExperimentTest::new(TestMethod::LikelihoodRatio, "beta_star:X1"),
        ],
        ..Default::default()
    };
    let s = run_experiment(&scenario, &settings).unwrap();
    assert_eq!(s.replicates, 6);
    assert_eq!(s.failed_replicates, 0);
    let b1 = s.parameter("beta:X1").unwrap();
    assert_eq!(b1.truth, 0.0);
    let cov = b1.coverage.unwrap();
    assert!((0.0..=1.0).contains(&cov));
    assert!(b1.rmse * b1.rmse >= b1.avg_bias * b1.avg_bias - 1e-15);
    let t = s.test(TestMethod::LikelihoodRatio, "beta_star:X1").unwrap();
    assert!((0.0..=1.0).contains(&t.rejection_rate));
    assert!(s.mean_zero_proportion > 0.4 && s.mean_zero_proportion < 0.9);
    // Same inputs, same output.
    assert_eq!(run_experiment(&scenario, &settings).unwrap(), s);
}

#[test]
fn misspecified_counts_still_fit() {
    let file = ExperimentFile::from_toml_file(&scenarios_dir().join("misspecified_beta_binomial.toml")).unwrap();
    let settings = ExperimentSettings { replicates: 3, bootstrap: 50, ..file.experiment };
    let s = run_experiment(&file.scenario, &settings).unwrap();
    assert_eq!(s.failed_replicates, 0);
}

#[test]
fn bic_sensitivity_grid() {
    let props = sensitivity_bic_experiment(&common::null_scenario(304), &[0.0, 2.5], 8, &FitSettings::default()).unwrap();
    assert_eq!(props.len(), 2);
    assert!(props.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(props[0] >= props[1], "{props:?}");
    assert!(sensitivity_bic_experiment(&common::null_scenario(304), &[-1.0], 2, &FitSettings::default()).is_err());
}
