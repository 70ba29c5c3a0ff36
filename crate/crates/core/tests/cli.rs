mod common;

use std::path::Path;
use std::process::{Command, Output};

use zipg::io::{read_tsv, CoefficientRow};

fn zipg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zipg")).args(args).output().expect("running zipg")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn data_args(dir: &Path) -> Vec<String> {
    [
        "--counts",
        &s(&dir.join("counts.tsv")),
        "--covariates",
        &s(&dir.join("covariates.tsv")),
        "--mean-cols",
        "X1,X2",
        "--disp-cols",
        "X1",
        "--depth-col",
        "depth",
    ]
    .iter()
    .map(|v| v.to_string())
    .collect()
}

fn run_with(dir: &Path, cmd: &str, extra: &[&str], out: &Path) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(data_args(dir));
    args.extend(extra.iter().map(|v| v.to_string()));
    args.extend(["--out".to_string(), s(out)]);
    zipg(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn fit_output_is_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 4, &[], 0.0, 20, 25, 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run_with(dir.path(), "fit", &["--workers", "1"], &a));
    ok(run_with(dir.path(), "fit", &["--workers", "3"], &b));
    for ext in ["tsv", "json"] {
        let x = std::fs::read(a.with_extension(ext)).unwrap();
        let y = std::fs::read(b.with_extension(ext)).unwrap();
        assert_eq!(x, y, "{ext} differs");
    }
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["command"], "fit");
    assert_eq!(json["records"].as_array().unwrap().len(), 4);
    assert_eq!(json["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = zipg(&[
        "fit",
        "--counts",
        &s(&dir.path().join("missing.tsv")),
        "--covariates",
        &s(&dir.path().join("missing_cov.tsv")),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(v["error"]["kind"].is_string());
    assert!(v["error"]["message"].as_str().unwrap().contains("missing.tsv"));
}

#[test]
fn unknown_coefficient_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 2, &[], 0.0, 10, 10, 2);
    let out = run_with(dir.path(), "test", &["--test", "beta:nope", "--B", "50"], &dir.path().join("t"));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(v["error"]["kind"], "invalid_argument");
}

#[test]
fn test_tables_round_trip_and_ignore_taxon_order() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 3, &[1], 1.0, 20, 25, 3);
    let a = dir.path().join("a");
    ok(run_with(dir.path(), "test", &["--B", "50", "--seed", "4"], &a));
    let rows: Vec<CoefficientRow> = read_tsv(&a.with_extension("tsv")).unwrap();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().all(|r| r.q.is_some() && r.boot_se.is_some() && r.method == "bWald"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(a.with_extension("json")).unwrap()).unwrap();
    let from_json: Vec<CoefficientRow> = serde_json::from_value(json["records"].clone()).unwrap();
    assert_eq!(from_json, rows);

    // Reverse the taxa rows; per-taxon results must not change.
    let text = std::fs::read_to_string(dir.path().join("counts.tsv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1..].reverse();
    std::fs::write(dir.path().join("counts.tsv"), lines.join("\n") + "\n").unwrap();
    let b = dir.path().join("b");
    ok(run_with(dir.path(), "test", &["--B", "50", "--seed", "4"], &b));
    let mut rev: Vec<CoefficientRow> = read_tsv(&b.with_extension("tsv")).unwrap();
    let key = |r: &CoefficientRow| (r.taxon.clone(), r.coefficient.clone());
    let mut fwd = rows.clone();
    fwd.sort_by_key(key);
    rev.sort_by_key(key);
    assert_eq!(fwd, rev);
}

#[test]
fn other_test_methods_and_intervals() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 2, &[], 0.0, 10, 10, 5);
    let out = dir.path().join("lrt");
    ok(run_with(dir.path(), "test", &["--method", "lrt", "--test", "beta_star:X1"], &out));
    let rows: Vec<CoefficientRow> = read_tsv(&out.with_extension("tsv")).unwrap();
    assert!(rows.iter().all(|r| r.method == "LRT" && r.boot_se.is_none()));

    let out = dir.path().join("pb");
    ok(run_with(dir.path(), "test", &["--method", "pbwald", "--test", "beta:X1", "--B", "50"], &out));
    let rows: Vec<CoefficientRow> = read_tsv(&out.with_extension("tsv")).unwrap();
    assert!(rows.iter().all(|r| r.method == "pbWald" && r.ci_lo.is_some()));

    let out = dir.path().join("bca");
    ok(run_with(
        dir.path(),
        "test",
        &["--test", "beta:X2", "--B", "50", "--ci", "bca", "--resample", "subject", "--joint-fdr"],
        &out,
    ));
    let rows: Vec<CoefficientRow> = read_tsv(&out.with_extension("tsv")).unwrap();
    assert!(rows.iter().all(|r| r.ci_lo.unwrap() < r.estimate && r.estimate < r.ci_hi.unwrap()));
}

#[test]
fn dispersion_effects_are_discovered() {
    let dir = tempfile::tempdir().unwrap();
    let shifted: Vec<usize> = (0..20).step_by(2).collect();
    let positives = common::write_taxa_files(dir.path(), 20, &shifted, 1.0, 20, 25, 6);
    let out = dir.path().join("disp");
    ok(run_with(dir.path(), "test", &["--test", "beta_star:X1", "--seed", "7", "--min-pobs", "0", "--max-pobs", "1"], &out));
    let rows: Vec<CoefficientRow> = read_tsv(&out.with_extension("tsv")).unwrap();
    assert_eq!(rows.len(), 20);
    let found = rows.iter().filter(|r| positives.contains(&r.taxon) && r.q.unwrap() <= 0.05).count();
    assert!(found as f64 >= 0.8 * positives.len() as f64, "{found} of {} true positives flagged", positives.len());
}

#[test]
fn filter_excludes_taxa_outside_bounds() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 3, &[], 0.0, 10, 10, 8);
    let out = dir.path().join("f");
    ok(run_with(dir.path(), "fit", &["--min-pobs", "0.0", "--max-pobs", "0.2"], &out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["excluded"].as_array().unwrap().len(), 3);
    assert!(json["records"].as_array().unwrap().is_empty());
}

#[test]
fn gof_writes_statistics_and_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    common::write_taxa_files(dir.path(), 2, &[], 0.0, 20, 25, 9);
    let out = dir.path().join("g");
    ok(run_with(dir.path(), "gof", &[], &out));
    let tsv = std::fs::read_to_string(out.with_extension("tsv")).unwrap();
    assert!(tsv.starts_with("taxon\tstatistic\tp_value"));
    assert_eq!(tsv.lines().count(), 3);
    let q = std::fs::read_to_string(dir.path().join("g.quantiles.tsv")).unwrap();
    assert_eq!(q.lines().count(), 1 + 2 * 9);
}

#[test]
fn simulate_runs_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/null_n500.toml");
    let out = dir.path().join("sim");
    ok(zipg(&["simulate", "--scenario", &s(&scenario), "--L", "3", "--B", "50", "--out", &s(&out)]));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["records"][0]["replicates"], 3);
    assert!(std::fs::read_to_string(out.with_extension("tsv")).unwrap().contains("beta:X1"));
}

#[test]
fn benchmark_prints_timing() {
    let out = ok(zipg(&["benchmark", "--fits", "5"]));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fits"], 5);
    assert_eq!(v["failed"], 0);
    assert!(v["ms_per_fit"].as_f64().unwrap() > 0.0);
}
