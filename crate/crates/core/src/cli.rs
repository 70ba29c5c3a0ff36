use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use zipg::em::{fit, FitResult, FitSettings};
use zipg::inference::{
    bh_fdr, bootstrap_replicates, confidence_interval, jackknife_estimates, ks_goodness_of_fit, likelihood_ratio_test,
    parametric_replicates, quantile_sorted, wald_from_draws, BootstrapDraws, BootstrapSettings, IntervalMethod,
    LinearHypothesis, ResampleUnit, TestMethod,
};
use zipg::io::{
    build_datasets, filter_taxa, output_paths, read_taxa_table, taxon_seed, with_suffix, write_json, write_tsv,
    CoefficientRow, LoadConfig, Provenance, ResultsFile, TaxaTable, TaxonFailure,
};
use zipg::rng::{domain, stream};
use zipg::simulation::{
    run_experiment, sample_counts_from_model, simulate_dataset, ExperimentFile, ExperimentTest, MonteCarloSummary,
    ScenarioConfig,
};
use zipg::{em, LongitudinalDataset, ModelSpec, OffsetMode, Variant, ZipgError};

#[derive(Parser, Debug)]
#[command(name = "zipg", version, about = "Zero-inflated Poisson-Gamma regression for longitudinal counts")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit every taxon and write the estimates.
    Fit(FitArgs),
    /// Bootstrap Wald (or likelihood-ratio) tests per taxon with BH-adjusted q-values.
    Test(TestArgs),
    /// Run a Monte Carlo experiment from a scenario file.
    Simulate(SimulateArgs),
    /// Time model fits on simulated null-design data.
    Benchmark(BenchmarkArgs),
    /// Kolmogorov-Smirnov check of each fitted taxon against data simulated from its fit.
    Gof(GofArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Offset {
    Depth,
    MedianRatios,
    None,
}

impl From<Offset> for OffsetMode {
    fn from(o: Offset) -> Self {
        match o {
            Offset::Depth => OffsetMode::LogDepth,
            Offset::MedianRatios => OffsetMode::LogMedianOfRatios,
            Offset::None => OffsetMode::None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Resample {
    Measurement,
    Subject,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Ci {
    Normal,
    Quantile,
    Bca,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    /// Nonparametric bootstrap Wald.
    Bwald,
    /// Parametric bootstrap Wald from the null fit.
    Pbwald,
    /// Likelihood-ratio test.
    Lrt,
}

/// Input data and model columns shared by the per-taxon subcommands.
#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Taxa table: header `taxon,<sample ids...>`, one row per taxon (tab or comma separated).
    #[arg(long)]
    counts: PathBuf,
    /// Per-sample covariates with subject and sample id columns.
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long, default_value = "subject")]
    subject_col: String,
    #[arg(long, default_value = "sample")]
    sample_col: String,
    /// Mean-model covariates (comma separated).
    #[arg(long, value_delimiter = ',')]
    mean_cols: Vec<String>,
    /// Dispersion covariates, constant within subject (comma separated).
    #[arg(long, value_delimiter = ',')]
    disp_cols: Vec<String>,
    /// Zero-inflation covariates; selects the covariate-linked zero-inflation model.
    #[arg(long, value_delimiter = ',')]
    zi_cols: Vec<String>,
    /// Column with sequencing depths (default: column sums of the taxa table).
    #[arg(long)]
    depth_col: Option<String>,
    #[arg(long, value_enum, default_value_t = Offset::Depth)]
    offset: Offset,
    /// Keep taxa with zero proportion strictly above this.
    #[arg(long, default_value_t = 0.1)]
    min_pobs: f64,
    /// Keep taxa with zero proportion strictly below this.
    #[arg(long, default_value_t = 0.9)]
    max_pobs: f64,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; writes `<out>.tsv` and `<out>.json`.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coefficients to test against zero, e.g. `beta:age` (default: every mean and dispersion covariate).
    #[arg(long = "test")]
    tests: Vec<String>,
    #[arg(long, value_enum, default_value_t = Method::Bwald)]
    method: Method,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 200)]
    b: usize,
    #[arg(long, value_enum, default_value_t = Resample::Measurement)]
    resample: Resample,
    #[arg(long, value_enum, default_value_t = Ci::Normal)]
    ci: Ci,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// BH false discovery rate used to report the number of discoveries per family.
    #[arg(long, default_value_t = 0.05)]
    fdr: f64,
    /// Adjust mean and dispersion hypotheses as one family instead of separately.
    #[arg(long)]
    joint_fdr: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// TOML file with `[scenario]` and `[experiment]` tables.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the number of Monte Carlo replicates.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Override the number of bootstrap replicates.
    #[arg(long = "B")]
    b: Option<usize>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BenchmarkArgs {
    /// Number of datasets to fit.
    #[arg(long, default_value_t = 100)]
    fits: usize,
    #[arg(long, default_value_t = 20)]
    n_subjects: usize,
    #[arg(long, default_value_t = 25)]
    n_measurements: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GofArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; writes `<out>.tsv`, `<out>.quantiles.tsv` and `<out>.json`.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

/// Parses arguments, runs the command and maps errors to a JSON record on stderr.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = e.downcast_ref::<ZipgError>().map_or("error", ZipgError::kind);
            let record = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{record}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!(ZipgError::InvalidArgument("--workers must be positive".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Test(a) => cmd_test(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Gof(a) => cmd_gof(&a),
    })
}

/// Filtered taxa, their datasets, the model and parameter names.
struct Prepared {
    table: TaxaTable,
    datasets: Vec<LongitudinalDataset>,
    excluded: Vec<zipg::io::Exclusion>,
    spec: ModelSpec,
    names: Vec<String>,
}

fn prepare(a: &DataArgs) -> Result<Prepared> {
    let full = read_taxa_table(&a.counts)?;
    let (table, excluded) = filter_taxa(&full, a.min_pobs, a.max_pobs)?;
    if !excluded.is_empty() {
        log::warn!("{} of {} taxa excluded by the zero-proportion filter", excluded.len(), full.taxa.len());
    }
    let config = LoadConfig {
        subject_col: a.subject_col.clone(),
        sample_col: a.sample_col.clone(),
        mean_cols: a.mean_cols.clone(),
        disp_cols: a.disp_cols.clone(),
        zi_cols: a.zi_cols.clone(),
        depth_col: a.depth_col.clone(),
        offset: a.offset.into(),
    };
    // Depths and size factors come from the unfiltered table.
    let mut datasets = build_datasets(&full, &a.covariates, &config)?;
    let keep: Vec<usize> = table.taxa.iter().map(|t| full.taxa.iter().position(|f| f == t).unwrap()).collect();
    let mut all: Vec<Option<LongitudinalDataset>> = datasets.drain(..).map(Some).collect();
    let datasets = keep.iter().map(|&i| all[i].take().unwrap()).collect();
    let variant = if a.zi_cols.is_empty() { Variant::Zipg } else { Variant::ZipgFull };
    let spec = ModelSpec {
        variant,
        d3: a.zi_cols.len(),
        ..ModelSpec::zipg(a.mean_cols.len(), a.disp_cols.len())
    }
    .with_offset(a.offset.into());
    spec.validate()?;
    let names = spec.param_names(&a.mean_cols, &a.disp_cols, &a.zi_cols);
    Ok(Prepared { table, datasets, excluded, spec, names })
}

fn failure(taxon: &str, e: &ZipgError) -> TaxonFailure {
    log::warn!("taxon {taxon}: {e}");
    TaxonFailure { taxon: taxon.to_string(), kind: e.kind().to_string(), message: e.to_string() }
}

fn write_outputs<C: Serialize, R: Serialize, T: Serialize>(
    out: &Path,
    file: &ResultsFile<C, R>,
    rows: &[T],
) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let (tsv, json) = output_paths(out);
    write_tsv(&tsv, rows)?;
    write_json(&json, file)?;
    eprintln!("wrote {} and {}", tsv.display(), json.display());
    Ok(())
}

#[derive(Serialize)]
struct FitRecord {
    taxon: String,
    names: Vec<String>,
    fit: FitResult,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let p = prepare(&a.data)?;
    let settings = FitSettings::default();
    let results: Vec<std::result::Result<FitResult, ZipgError>> =
        p.datasets.par_iter().map(|d| fit(d, &p.spec, &settings)).collect();
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (taxon, r) in p.table.taxa.iter().zip(results) {
        match r {
            Ok(f) => {
                for (name, v) in p.names.iter().zip(f.params.to_vec()) {
                    rows.push(CoefficientRow {
                        taxon: taxon.clone(),
                        coefficient: name.clone(),
                        estimate: v,
                        boot_se: None,
                        ci_lo: None,
                        ci_hi: None,
                        p: None,
                        q: None,
                        method: "MLE".into(),
                    });
                }
                records.push(FitRecord { taxon: taxon.clone(), names: p.names.clone(), fit: f });
            }
            Err(e) => failures.push(failure(taxon, &e)),
        }
    }
    let file = ResultsFile {
        provenance: Provenance::new("fit", a.seed, a)?,
        config: a,
        records,
        excluded: p.excluded,
        failures,
    };
    write_outputs(&a.out, &file, &rows)
}

fn interval_method(ci: Ci) -> IntervalMethod {
    match ci {
        Ci::Normal => IntervalMethod::Normal,
        Ci::Quantile => IntervalMethod::Quantile,
        Ci::Bca => IntervalMethod::Bca,
    }
}

/// Hypothesis family used for FDR adjustment.
fn family(coefficient: &str) -> &'static str {
    if coefficient.starts_with("beta_star") {
        "dispersion"
    } else if coefficient.starts_with("gamma") {
        "zero-inflation"
    } else {
        "mean"
    }
}

fn test_taxon(
    a: &TestArgs,
    p: &Prepared,
    taxon: &str,
    data: &LongitudinalDataset,
    targets: &[usize],
) -> std::result::Result<Vec<CoefficientRow>, ZipgError> {
    let fit_settings = FitSettings::default();
    let estimate = fit(data, &p.spec, &fit_settings)?;
    let omega = estimate.params.to_vec();
    let n = omega.len();
    let boot = BootstrapSettings {
        replicates: a.b,
        resample: match a.resample {
            Resample::Measurement => ResampleUnit::Measurement,
            Resample::Subject => ResampleUnit::Subject,
        },
        seed: taxon_seed(a.seed, taxon),
        fit: fit_settings,
    };
    let draws: Option<BootstrapDraws> = match a.method {
        Method::Bwald => Some(bootstrap_replicates(data, &p.spec, &estimate, &boot)?),
        Method::Pbwald | Method::Lrt => None,
    };
    let method = interval_method(a.ci);
    let jackknife = if method == IntervalMethod::Bca && draws.is_some() {
        Some(jackknife_estimates(data, &p.spec, &estimate, &fit_settings)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(targets.len());
    for &j in targets {
        let h = LinearHypothesis::coefficients(n, &[j])?;
        let (report, these_draws) = match a.method {
            Method::Bwald => {
                let d = draws.as_ref().expect("drawn above");
                (wald_from_draws(&omega, d, &h, TestMethod::BootstrapWald), None)
            }
            Method::Pbwald => {
                let null = em::fit_restricted(data, &p.spec, h.a(), h.b(), &fit_settings)?;
                let d = parametric_replicates(data, &p.spec, &null, &estimate, &boot)?;
                (wald_from_draws(&omega, &d, &h, TestMethod::ParametricBootstrapWald), Some(d))
            }
            Method::Lrt => (likelihood_ratio_test(data, &p.spec, &h, &fit_settings), None),
        };
        let d = these_draws.as_ref().or(draws.as_ref());
        let (se, ci) = match d {
            Some(d) if d.draws.len() >= 2 => {
                let col = d.coordinate(j);
                let jack: Option<Vec<f64>> = jackknife.as_ref().map(|jk| jk.iter().map(|v| v[j]).collect());
                let ci = confidence_interval(omega[j], &col, a.level, method, jack.as_deref())?;
                (Some(d.sd(j)), Some(ci))
            }
            _ => (None, None),
        };
        let (pval, label) = match report {
            Ok(r) => {
                if r.unreliable {
                    log::warn!("taxon {taxon}, {}: report flagged unreliable", p.names[j]);
                }
                (Some(r.p_value), r.method.label())
            }
            Err(e) => {
                log::warn!("taxon {taxon}, {}: {e}", p.names[j]);
                (None, "failed")
            }
        };
        rows.push(CoefficientRow {
            taxon: taxon.to_string(),
            coefficient: p.names[j].clone(),
            estimate: omega[j],
            boot_se: se,
            ci_lo: ci.map(|c| c.lower),
            ci_hi: ci.map(|c| c.upper),
            p: pval,
            q: None,
            method: label.to_string(),
        });
    }
    Ok(rows)
}

/// Fills `q` by BH within each family (or jointly).
fn adjust(rows: &mut [CoefficientRow], joint: bool, fdr: f64) {
    let families: Vec<&'static str> = if joint { vec!["all"] } else { vec!["mean", "dispersion", "zero-inflation"] };
    for fam in families {
        let idx: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.p.is_some() && (joint || family(&r.coefficient) == fam))
            .map(|(i, _)| i)
            .collect();
        let ps: Vec<f64> = idx.iter().map(|&i| rows[i].p.unwrap()).collect();
        let (rejected, qs) = bh_fdr(&ps, fdr);
        if !ps.is_empty() {
            let n = rejected.iter().filter(|&&r| r).count();
            eprintln!("{fam} family: {n} of {} hypotheses rejected at FDR {fdr}", ps.len());
        }
        for (&i, q) in idx.iter().zip(qs) {
            rows[i].q = Some(q);
        }
    }
}

fn cmd_test(a: &TestArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        bail!(ZipgError::Domain { name: "--level", value: a.level });
    }
    if !(a.fdr > 0.0 && a.fdr < 1.0) {
        bail!(ZipgError::Domain { name: "--fdr", value: a.fdr });
    }
    let p = prepare(&a.data)?;
    let targets: Vec<usize> = if a.tests.is_empty() {
        (0..p.names.len()).filter(|&j| p.names[j].starts_with("beta:") || p.names[j].starts_with("beta_star:")).collect()
    } else {
        a.tests
            .iter()
            .map(|t| {
                p.names.iter().position(|n| n == t).ok_or_else(|| {
                    ZipgError::InvalidArgument(format!("unknown coefficient '{t}'; expected one of {:?}", p.names))
                })
            })
            .collect::<std::result::Result<_, _>>()?
    };
    if targets.is_empty() {
        bail!(ZipgError::InvalidArgument("nothing to test: give --mean-cols/--disp-cols or --test".into()));
    }
    let results: Vec<_> = p
        .table
        .taxa
        .par_iter()
        .zip(&p.datasets)
        .map(|(taxon, data)| test_taxon(a, &p, taxon, data, &targets))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (taxon, r) in p.table.taxa.iter().zip(results) {
        match r {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(failure(taxon, &e)),
        }
    }
    adjust(&mut rows, a.joint_fdr, a.fdr);
    let file = ResultsFile {
        provenance: Provenance::new("test", a.seed, a)?,
        config: a,
        records: rows.clone(),
        excluded: p.excluded,
        failures,
    };
    write_outputs(&a.out, &file, &rows)
}

#[derive(Serialize)]
struct SummaryRow {
    quantity: String,
    truth: Option<f64>,
    avg_bias: Option<f64>,
    empirical_se: Option<f64>,
    avg_se: Option<f64>,
    rmse: Option<f64>,
    coverage: Option<f64>,
    rejection_rate: Option<f64>,
}

fn summary_rows(s: &MonteCarloSummary) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = s
        .parameters
        .iter()
        .map(|p| SummaryRow {
            quantity: p.name.clone(),
            truth: Some(p.truth),
            avg_bias: Some(p.avg_bias),
            empirical_se: p.empirical_se,
            avg_se: p.avg_se,
            rmse: Some(p.rmse),
            coverage: p.coverage,
            rejection_rate: None,
        })
        .collect();
    rows.extend(s.tests.iter().map(|t| SummaryRow {
        quantity: ExperimentTest::label(&t.test),
        truth: None,
        avg_bias: None,
        empirical_se: None,
        avg_se: None,
        rmse: None,
        coverage: None,
        rejection_rate: Some(t.rejection_rate),
    }));
    rows
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut file = ExperimentFile::from_toml_file(&a.scenario)?;
    if let Some(l) = a.l {
        file.experiment.replicates = l;
    }
    if let Some(b) = a.b {
        file.experiment.bootstrap = b;
    }
    if let Some(s) = a.seed {
        file.scenario.seed = s;
    }
    let summary = run_experiment(&file.scenario, &file.experiment)?;
    for row in summary_rows(&summary) {
        eprintln!("{:<22} {}", row.quantity, serde_json::to_string(&row).unwrap_or_default());
    }
    let out = ResultsFile {
        provenance: Provenance::new("simulate", file.scenario.seed, &file)?,
        config: &file,
        records: vec![summary.clone()],
        excluded: vec![],
        failures: vec![],
    };
    write_outputs(&a.out, &out, &summary_rows(&summary))
}

#[derive(Serialize)]
struct BenchmarkReport {
    fits: usize,
    failed: usize,
    n_obs: usize,
    workers: usize,
    seconds: f64,
    ms_per_fit: f64,
    mean_em_iterations: f64,
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    if a.fits == 0 {
        bail!(ZipgError::InvalidArgument("--fits must be positive".into()));
    }
    let scenario = ScenarioConfig {
        n_subjects: a.n_subjects,
        n_measurements: zipg::simulation::Measurements::Equal(a.n_measurements),
        seed: a.seed,
        ..ScenarioConfig::null_design()
    };
    scenario.validate()?;
    let data: Vec<LongitudinalDataset> = (0..a.fits as u64)
        .into_par_iter()
        .map(|r| simulate_dataset(&scenario, &mut stream(a.seed, &[domain::EXPERIMENT, r])))
        .collect::<std::result::Result<_, _>>()?;
    let spec = scenario.spec();
    let settings = FitSettings::default();
    let start = Instant::now();
    let fits: Vec<_> = data.par_iter().map(|d| fit(d, &spec, &settings)).collect();
    let seconds = start.elapsed().as_secs_f64();
    let ok: Vec<&FitResult> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    let report = BenchmarkReport {
        fits: a.fits,
        failed: a.fits - ok.len(),
        n_obs: scenario.total_measurements(),
        workers: rayon::current_num_threads(),
        seconds,
        ms_per_fit: 1e3 * seconds / a.fits as f64,
        mean_em_iterations: ok.iter().map(|f| f.n_iterations as f64).sum::<f64>() / ok.len().max(1) as f64,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GofRow {
    taxon: String,
    statistic: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct QuantileRow {
    taxon: String,
    probability: f64,
    observed: f64,
    predicted: f64,
}

const GOF_PROBABILITIES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn gof_taxon(
    a: &GofArgs,
    p: &Prepared,
    taxon: &str,
    data: &LongitudinalDataset,
) -> std::result::Result<(GofRow, Vec<QuantileRow>), ZipgError> {
    let f = fit(data, &p.spec, &FitSettings::default())?;
    let seed = taxon_seed(a.seed, taxon);
    let (statistic, p_value) = ks_goodness_of_fit(data, &f, seed)?;
    let mut observed: Vec<f64> = data.counts().iter().map(|&w| w as f64).collect();
    observed.sort_by(f64::total_cmp);
    let mut predicted: Vec<f64> =
        sample_counts_from_model(&f.params, data, &p.spec, &mut stream(seed, &[domain::GOODNESS_OF_FIT, u64::MAX]))?
            .into_iter()
            .map(|w| w as f64)
            .collect();
    predicted.sort_by(f64::total_cmp);
    let quantiles = GOF_PROBABILITIES
        .iter()
        .map(|&q| QuantileRow {
            taxon: taxon.to_string(),
            probability: q,
            observed: quantile_sorted(&observed, q),
            predicted: quantile_sorted(&predicted, q),
        })
        .collect();
    Ok((GofRow { taxon: taxon.to_string(), statistic, p_value }, quantiles))
}

fn cmd_gof(a: &GofArgs) -> Result<()> {
    let p = prepare(&a.data)?;
    let results: Vec<_> =
        p.table.taxa.par_iter().zip(&p.datasets).map(|(taxon, data)| gof_taxon(a, &p, taxon, data)).collect();
    let mut rows = Vec::new();
    let mut quantiles = Vec::new();
    let mut failures = Vec::new();
    for (taxon, r) in p.table.taxa.iter().zip(results) {
        match r {
            Ok((row, q)) => {
                rows.push(row);
                quantiles.extend(q);
            }
            Err(e) => failures.push(failure(taxon, &e)),
        }
    }
    let file = ResultsFile {
        provenance: Provenance::new("gof", a.seed, a)?,
        config: a,
        records: rows.iter().collect::<Vec<_>>(),
        excluded: p.excluded.clone(),
        failures,
    };
    write_tsv(&with_suffix(&a.out, ".quantiles.tsv"), &quantiles)?;
    write_outputs(&a.out, &file, &rows)
}
