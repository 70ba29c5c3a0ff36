//! Wall time of experiment replicates on the null design.
use std::time::Instant;
use zipg::inference::TestMethod;
use zipg::simulation::{run_experiment, ExperimentSettings, ExperimentTest, ScenarioConfig};

fn main() {
    let l: usize = std::env::var("REPS").ok().and_then(|v| v.parse().ok()).unwrap_or(2);
    let settings = ExperimentSettings {
        replicates: l,
        bootstrap: 200,
        tests: vec![ExperimentTest::new(TestMethod::BootstrapWald, "beta:X1")],
        ..Default::default()
    };
    let t = Instant::now();
    let s = run_experiment(&ScenarioConfig::null_design(), &settings).unwrap();
    println!("{:.2}s per replicate", t.elapsed().as_secs_f64() / l as f64);
    println!("{}", serde_json::to_string_pretty(&s).unwrap());
}
