//! Python bindings: datasets, model specifications, fitting, tests and simulation.
//!
//! Long-running calls release the interpreter lock.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use zipg::em::{self, FitSettings};
use zipg::inference::{self, BootstrapSettings, LinearHypothesis, ResampleUnit};
use zipg::model::{self, Matrix, OffsetMode, Variant};
use zipg::rng::{domain, stream};
use zipg::simulation::{self as sim, ExperimentFile};

create_exception!(pyzipg, ZipgError, PyException, "Error raised by the zipg library.");

fn err(e: zipg::ZipgError) -> PyErr {
    ZipgError::new_err(format!("{} ({})", e, e.kind()))
}

/// Row-major nested lists → matrix with `ncols` columns (`ncols` is needed for zero-column input).
pub fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize) -> zipg::Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() {
        return Ok(Matrix::zeros(nrows, 0));
    }
    if rows.len() != nrows {
        return Err(zipg::ZipgError::DimensionMismatch { matrix: "covariate rows", expected: nrows, found: rows.len() });
    }
    Matrix::from_rows(rows, ncols)
}

pub fn parse_variant(s: &str) -> zipg::Result<Variant> {
    match s {
        "zipg" => Ok(Variant::Zipg),
        "zipg-full" | "zipg_full" => Ok(Variant::ZipgFull),
        _ => Err(zipg::ZipgError::InvalidArgument(format!("unknown variant '{s}'"))),
    }
}

pub fn parse_offset(s: &str) -> zipg::Result<OffsetMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| zipg::ZipgError::InvalidArgument(format!("unknown offset mode '{s}'")))
}

pub fn parse_resample(s: &str) -> zipg::Result<ResampleUnit> {
    match s {
        "measurement" => Ok(ResampleUnit::Measurement),
        "subject" => Ok(ResampleUnit::Subject),
        _ => Err(zipg::ZipgError::InvalidArgument(format!("unknown resampling unit '{s}'"))),
    }
}

/// Which sub-model covariates enter, and how.
#[pyclass(name = "ModelSpec", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyModelSpec {
    inner: model::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (d1, d2, variant = "zipg", d3 = 0, offset = "log-depth"))]
    fn new(d1: usize, d2: usize, variant: &str, d3: usize, offset: &str) -> PyResult<Self> {
        let variant = parse_variant(variant).map_err(err)?;
        let inner = model::ModelSpec { variant, d3, ..model::ModelSpec::zipg(d1, d2) }
            .with_offset(parse_offset(offset).map_err(err)?);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    /// Flat index of the coefficient on mean covariate `j`.
    fn mean_index(&self, j: usize) -> usize {
        self.inner.mean_index(j)
    }

    /// Flat index of the coefficient on dispersion covariate `j`.
    fn disp_index(&self, j: usize) -> usize {
        self.inner.disp_index(j)
    }

    #[pyo3(signature = (mean = vec![], disp = vec![], zi = vec![]))]
    fn param_names(&self, mean: Vec<String>, disp: Vec<String>, zi: Vec<String>) -> Vec<String> {
        self.inner.param_names(&mean, &disp, &zi)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(d1={}, d2={}, variant='{}', d3={})",
            self.inner.d1,
            self.inner.d2,
            self.inner.variant.label(),
            self.inner.d3
        )
    }
}

/// Counts, depths and covariates of one taxon.
#[pyclass(name = "Dataset", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: model::LongitudinalDataset,
}

#[pymethods]
impl PyDataset {
    /// `mean_covariates`: one row per observation; `disp_covariates`: one row per subject.
    #[new]
    #[pyo3(signature = (counts, depths, subject_of, mean_covariates = vec![], disp_covariates = vec![], zi_covariates = None))]
    fn new(
        counts: Vec<u64>,
        depths: Vec<f64>,
        subject_of: Vec<usize>,
        mean_covariates: Vec<Vec<f64>>,
        disp_covariates: Vec<Vec<f64>>,
        zi_covariates: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let n = counts.len();
        let n_subjects = subject_of.iter().max().map_or(0, |m| m + 1);
        let mean = matrix_from_rows(&mean_covariates, n).map_err(err)?;
        let disp = matrix_from_rows(&disp_covariates, n_subjects).map_err(err)?;
        let zi = zi_covariates.map(|z| matrix_from_rows(&z, n)).transpose().map_err(err)?;
        let inner = model::LongitudinalDataset::new(counts, depths, mean, disp, subject_of, zi).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn zero_proportion(&self) -> f64 {
        self.inner.zero_proportion()
    }
}

#[pyclass(name = "FitResult", frozen)]
pub struct PyFitResult {
    inner: em::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.to_vec()
    }
    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }
    #[getter]
    fn loglik_trace(&self) -> Vec<f64> {
        self.inner.loglik_trace.clone()
    }
    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }
    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
    #[getter]
    fn n_iterations(&self) -> usize {
        self.inner.n_iterations
    }
    #[getter]
    fn responsibilities(&self) -> Vec<f64> {
        self.inner.responsibilities.clone()
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| ZipgError::new_err(e.to_string()))
    }
    fn __repr__(&self) -> String {
        format!("FitResult(loglik={:.4}, converged={}, iterations={})", self.inner.loglik, self.inner.converged, self.inner.n_iterations)
    }
}

#[pyclass(name = "TestReport", frozen)]
pub struct PyTestReport {
    inner: inference::TestReport,
}

#[pymethods]
impl PyTestReport {
    #[getter]
    fn statistic(&self) -> f64 {
        self.inner.statistic
    }
    #[getter]
    fn df(&self) -> usize {
        self.inner.df
    }
    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.label()
    }
    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.inner.estimate.clone()
    }
    #[getter]
    fn n_bootstrap(&self) -> usize {
        self.inner.n_bootstrap
    }
    #[getter]
    fn n_bootstrap_failed(&self) -> usize {
        self.inner.n_bootstrap_failed
    }
    #[getter]
    fn unreliable(&self) -> bool {
        self.inner.unreliable
    }
    fn __repr__(&self) -> String {
        format!("TestReport(method='{}', statistic={:.4}, df={}, p_value={:.4e})", self.method(), self.inner.statistic, self.inner.df, self.inner.p_value)
    }
}

/// Data-generating process for simulations.
#[pyclass(name = "Scenario", frozen)]
pub struct PyScenario {
    inner: sim::ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// 20 subjects × 25 measurements, β = (0, 0.45), β* = 1, p = 0.5.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn null_design(seed: u64) -> Self {
        Self { inner: sim::ScenarioConfig { seed, ..sim::ScenarioConfig::null_design() } }
    }

    /// The `[scenario]` table of an experiment file.
    #[staticmethod]
    fn from_toml(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentFile::from_toml_file(&path).map_err(err)?.scenario })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn spec(&self) -> PyModelSpec {
        PyModelSpec { inner: self.inner.spec() }
    }

    #[getter]
    fn truth(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.truth().map_err(err)?.to_vec())
    }

    /// Dataset number `index` of this scenario.
    #[pyo3(signature = (index = 0))]
    fn simulate(&self, index: u64) -> PyResult<PyDataset> {
        let mut rng = stream(self.inner.seed, &[domain::DATA, index]);
        Ok(PyDataset { inner: sim::simulate_dataset(&self.inner, &mut rng).map_err(err)? })
    }
}

fn fit_settings(t_max: usize, eps_tol: f64) -> FitSettings {
    FitSettings { t_max, eps_tol, ..FitSettings::default() }
}

#[pyfunction]
#[pyo3(signature = (data, spec, t_max = 100, eps_tol = 1e-8))]
fn fit(py: Python<'_>, data: &PyDataset, spec: &PyModelSpec, t_max: usize, eps_tol: f64) -> PyResult<PyFitResult> {
    let settings = fit_settings(t_max, eps_tol);
    let inner = py.detach(|| em::fit(&data.inner, &spec.inner, &settings)).map_err(err)?;
    Ok(PyFitResult { inner })
}

fn hypothesis(spec: &PyModelSpec, coefficients: &[usize]) -> PyResult<LinearHypothesis> {
    LinearHypothesis::coefficients(spec.inner.n_params(), coefficients).map_err(err)
}

/// Bootstrap Wald test that the coefficients at the given flat indices are zero.
#[pyfunction]
#[pyo3(signature = (data, spec, coefficients, replicates = 200, seed = 0, resample = "measurement", parametric = false))]
fn bootstrap_wald(
    py: Python<'_>,
    data: &PyDataset,
    spec: &PyModelSpec,
    coefficients: Vec<usize>,
    replicates: usize,
    seed: u64,
    resample: &str,
    parametric: bool,
) -> PyResult<PyTestReport> {
    let h = hypothesis(spec, &coefficients)?;
    let settings = BootstrapSettings {
        replicates,
        seed,
        resample: parse_resample(resample).map_err(err)?,
        fit: FitSettings::default(),
    };
    let inner = py
        .detach(|| {
            if parametric {
                inference::parametric_bootstrap_wald(&data.inner, &spec.inner, &h, &settings)
            } else {
                inference::bootstrap_wald(&data.inner, &spec.inner, &h, &settings)
            }
        })
        .map_err(err)?;
    Ok(PyTestReport { inner })
}

#[pyfunction]
fn likelihood_ratio_test(py: Python<'_>, data: &PyDataset, spec: &PyModelSpec, coefficients: Vec<usize>) -> PyResult<PyTestReport> {
    let h = hypothesis(spec, &coefficients)?;
    let inner = py
        .detach(|| inference::likelihood_ratio_test(&data.inner, &spec.inner, &h, &FitSettings::default()))
        .map_err(err)?;
    Ok(PyTestReport { inner })
}

#[pyfunction]
fn log_pg_pmf(w: u64, lam: f64, theta: f64) -> f64 {
    model::log_pg_pmf(w, lam, theta)
}

/// Benjamini-Hochberg rejections and q-values.
#[pyfunction]
#[pyo3(signature = (p_values, q = 0.05))]
fn bh_fdr(p_values: Vec<f64>, q: f64) -> (Vec<bool>, Vec<f64>) {
    inference::bh_fdr(&p_values, q)
}

#[pymodule]
pub fn pyzipg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ZipgError", m.py().get_type::<ZipgError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyTestReport>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_wald, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood_ratio_test, m)?)?;
    m.add_function(wrap_pyfunction!(log_pg_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(bh_fdr, m)?)?;
    Ok(())
}
