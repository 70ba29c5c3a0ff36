#![allow(dead_code)]

pub mod checks;

use std::path::Path;

use zipg::model::{LongitudinalDataset, Matrix, ModelSpec};
use zipg::rng::{domain, stream};
use zipg::simulation::{simulate_dataset, ScenarioConfig};

/// The null design with the given seed.
pub fn null_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, ..ScenarioConfig::null_design() }
}

/// One dataset from `scenario`, drawn the same way the experiment runner does.
pub fn simulate(scenario: &ScenarioConfig, stream_id: u64) -> (LongitudinalDataset, ModelSpec) {
    let mut rng = stream(scenario.seed, &[domain::DATA, stream_id]);
    let data = simulate_dataset(scenario, &mut rng).expect("simulation");
    (data, scenario.spec())
}

/// A single observation with depth 4, so `λ = 4` at `β₀ = 0`.
pub fn single_observation(w: u64) -> (LongitudinalDataset, ModelSpec) {
    let data = LongitudinalDataset::new(vec![w], vec![4.0], Matrix::zeros(1, 0), Matrix::zeros(1, 0), vec![0], None)
        .expect("dataset");
    (data, ModelSpec::zipg(0, 0))
}

/// Writes a counts table (taxa × samples) and a covariate table for `n_taxa`
/// taxa simulated from the null design. Taxa whose index is in `shifted` get
/// dispersion effect `beta_star1`, all others 0.
///
/// Returns the taxa names that carry the effect.
pub fn write_taxa_files(
    dir: &Path,
    n_taxa: usize,
    shifted: &[usize],
    beta_star1: f64,
    n_subjects: usize,
    n_measurements: usize,
    seed: u64,
) -> Vec<String> {
    let base = ScenarioConfig {
        n_subjects,
        n_measurements: zipg::simulation::Measurements::Equal(n_measurements),
        seed,
        ..ScenarioConfig::null_design()
    };
    // Covariates are shared by all taxa: simulate them once from the first taxon.
    let mut rng = stream(seed, &[domain::DATA, 0]);
    let covs = zipg::simulation::generate_covariates(&base, &mut rng);
    let depths = zipg::simulation::generate_depths(&base.depth_model, covs.subject_of.len(), &mut rng).unwrap();
    let n_obs = covs.subject_of.len();
    let mean = Matrix::from_columns(&[covs.x1.clone(), covs.x2.clone()], n_obs).unwrap();
    let disp = Matrix::from_columns(&[covs.x1_subject.clone()], n_subjects).unwrap();
    let design = LongitudinalDataset::new(vec![0; n_obs], depths.clone(), mean, disp, covs.subject_of.clone(), None)
        .unwrap();

    let mut counts = String::from("taxon");
    for i in 0..n_obs {
        counts.push_str(&format!("\tS{i}"));
    }
    counts.push('\n');
    let mut positives = Vec::new();
    for t in 0..n_taxa {
        let name = format!("taxon_{t:03}");
        let bs = if shifted.contains(&t) { beta_star1 } else { 0.0 };
        if shifted.contains(&t) {
            positives.push(name.clone());
        }
        let truth = [base.beta0, base.beta[0], base.beta[1], base.beta_star0, bs, 0.0];
        let spec = base.spec();
        let omega = zipg::model::ParamVector::from_slice(&spec, &truth).unwrap();
        let mut rng = stream(seed, &[domain::DATA, 1 + t as u64]);
        let w = zipg::simulation::sample_counts_from_model(&omega, &design, &spec, &mut rng).unwrap();
        counts.push_str(&name);
        for v in w {
            counts.push_str(&format!("\t{v}"));
        }
        counts.push('\n');
    }
    std::fs::write(dir.join("counts.tsv"), counts).unwrap();

    let mut cov = String::from("sample\tsubject\tX1\tX2\tdepth\n");
    for i in 0..n_obs {
        cov.push_str(&format!(
            "S{i}\tP{}\t{}\t{}\t{}\n",
            covs.subject_of[i], covs.x1[i], covs.x2[i], depths[i]
        ));
    }
    std::fs::write(dir.join("covariates.tsv"), cov).unwrap();
    positives
}
