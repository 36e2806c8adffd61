use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use typicality_core::dynamics::{self, CoefficientMatrix};
use typicality_core::ensembles::{
    self, Band, BandProfile, NormalizationMode, Symmetry,
};
use typicality_core::experiment::{self, ExperimentConfig, Mode};
use typicality_core::linalg::{ComplexMatrix, HermitianOperator};
use typicality_core::rng::SeededRng;
use typicality_core::typicality as typ;
use typicality_core::Error;

fn to_py(err: Error) -> PyErr {
    if err.is_config_error() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{s}`")))
}

fn matrix_rows(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix_from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<ComplexMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    ComplexMatrix::from_row_major(r, c, rows.into_iter().flatten().collect()).map_err(to_py)
}

/// A random interaction ensemble.
#[pyclass(name = "EnsembleSpec", module = "typicality", frozen)]
struct PyEnsembleSpec {
    inner: ensembles::EnsembleSpec,
}

#[pymethods]
impl PyEnsembleSpec {
    #[staticmethod]
    #[pyo3(signature = (dim, sigma_w, symmetry="complex-hermitian", normalization="exact"))]
    fn wigner(dim: usize, sigma_w: f64, symmetry: &str, normalization: &str) -> PyResult<Self> {
        let inner = ensembles::EnsembleSpec::wigner(dim, sigma_w)
            .with_symmetry(parse::<Symmetry>("symmetry", symmetry)?)
            .with_normalization(parse::<NormalizationMode>("normalization", normalization)?);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (dim, sigma_w, bandwidth, profile="hard-cutoff", normalization="exact"))]
    fn wbrm(dim: usize, sigma_w: f64, bandwidth: usize, profile: &str, normalization: &str) -> PyResult<Self> {
        let band = Band {
            profile: parse::<BandProfile>("profile", profile)?,
            bandwidth,
        };
        let inner = ensembles::EnsembleSpec::wbrm(dim, sigma_w, band)
            .with_normalization(parse::<NormalizationMode>("normalization", normalization)?);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn rrm_semicircle(dim: usize, sigma_w: f64) -> PyResult<Self> {
        let inner = ensembles::EnsembleSpec::rrm_semicircle(dim, sigma_w);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn rrm(spectrum: Vec<f64>) -> PyResult<Self> {
        let inner = ensembles::EnsembleSpec::rrm(spectrum);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn sigma_w(&self) -> f64 {
        self.inner.sigma_w
    }

    /// `(common, gaussian)`; `gaussian` is None for RRM.
    fn poincare_lower_bound(&self) -> PyResult<(f64, Option<f64>)> {
        let b = ensembles::poincare_lower_bound(&self.inner).map_err(to_py)?;
        Ok((b.common, b.gaussian))
    }

    /// One draw from stream `stream` of `seed`, as a list of rows.
    #[pyo3(signature = (seed, stream=0))]
    fn sample(&self, seed: u64, stream: u64) -> PyResult<Vec<Vec<Complex64>>> {
        let mut rng = SeededRng::new(seed, stream);
        let w = ensembles::sample(&self.inner, &mut rng).map_err(to_py)?;
        Ok(matrix_rows(w.matrix()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "EnsembleSpec(kind={:?}, dim={}, sigma_w={})",
            self.inner.kind, self.inner.dim, self.inner.sigma_w
        )
    }
}

/// Two-level (or explicit-spectrum) system in a Gaussian environment.
#[pyclass(name = "SystemSetup", module = "typicality", frozen)]
struct PySystemSetup {
    inner: dynamics::SystemSetup,
}

#[pymethods]
impl PySystemSetup {
    #[new]
    #[pyo3(signature = (dim_e, gap=1.0, sigma_e=1.0, epsilon_e=-1.27, initial_system_level=1, spectrum_s=None))]
    fn new(
        dim_e: usize,
        gap: f64,
        sigma_e: f64,
        epsilon_e: f64,
        initial_system_level: usize,
        spectrum_s: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let inner = dynamics::SystemSetup {
            spectrum_s,
            gap,
            dim_e,
            sigma_e,
            epsilon_e,
            initial_system_level,
        };
        inner.build().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.system_spectrum().len() * self.inner.dim_e
    }

    #[getter]
    fn dim_e(&self) -> usize {
        self.inner.dim_e
    }

    fn environment_spectrum(&self) -> PyResult<Vec<f64>> {
        dynamics::gaussian_environment_spectrum(self.inner.dim_e, self.inner.sigma_e).map_err(to_py)
    }

    fn initial_environment_energy(&self) -> PyResult<f64> {
        self.inner.initial_environment_energy().map_err(to_py)
    }
}

fn trajectory_dict<'py>(py: Python<'py>, traj: &dynamics::Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    d.set_item("populations", traj.populations.clone())?;
    let states: Vec<Vec<Vec<Complex64>>> = traj.reduced_states.iter().map(|r| matrix_rows(r.matrix())).collect();
    d.set_item("reduced_states", states)?;
    Ok(d)
}

/// Reduced dynamics for one interaction drawn from stream `stream` of `seed`.
#[pyfunction]
#[pyo3(signature = (setup, spec, times, seed, stream=0))]
fn run_trajectory<'py>(
    py: Python<'py>,
    setup: &PySystemSetup,
    spec: &PyEnsembleSpec,
    times: Vec<f64>,
    seed: u64,
    stream: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (sys, psi0) = setup.inner.build().map_err(to_py)?;
    let traj = py
        .detach(|| {
            let w = ensembles::sample(&spec.inner, &mut SeededRng::new(seed, stream))?;
            dynamics::run_trajectory(&sys, &w, &psi0, &times)
        })
        .map_err(to_py)?;
    trajectory_dict(py, &traj)
}

#[pyfunction]
fn ensemble_statistics<'py>(
    py: Python<'py>,
    setup: &PySystemSetup,
    spec: &PyEnsembleSpec,
    times: Vec<f64>,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (sys, psi0) = setup.inner.build().map_err(to_py)?;
    let stats = py
        .detach(|| typ::ensemble_statistics(&sys, &spec.inner, &psi0, &times, n, seed))
        .map_err(to_py)?;
    let value = serde_json::to_value(&stats).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

/// `2 tau^2 (dim_s - Tr((gamma gamma^H)^2))` for a `dim_s x dim_e` coefficient matrix.
#[pyfunction]
fn exact_commutator_norm_sq(gamma: Vec<Vec<Complex64>>, tau: f64) -> PyResult<f64> {
    let gamma = CoefficientMatrix::from_matrix(matrix_from_rows(gamma)?);
    typ::exact_commutator_norm_sq(&gamma, tau).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (setup, spec, tau, seed, stream=0, step=None))]
fn gradient_report<'py>(
    py: Python<'py>,
    setup: &PySystemSetup,
    spec: &PyEnsembleSpec,
    tau: f64,
    seed: u64,
    stream: u64,
    step: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let (sys, psi0) = setup.inner.build().map_err(to_py)?;
    let step = step.unwrap_or(1e-5 * spec.inner.sigma_w);
    let report = py
        .detach(|| {
            let w = ensembles::sample(&spec.inner, &mut SeededRng::new(seed, stream))?;
            typ::gradient_report(&sys, &w, &psi0, tau, step)
        })
        .map_err(to_py)?;
    let value = serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

#[pyfunction]
#[pyo3(signature = (spec, function, n, seed, setup=None))]
fn poincare_mc_test<'py>(
    py: Python<'py>,
    spec: &PyEnsembleSpec,
    function: &str,
    n: usize,
    seed: u64,
    setup: Option<PyRef<'py, PySystemSetup>>,
) -> PyResult<Bound<'py, PyAny>> {
    let f: typ::TestFunction = function.parse().map_err(to_py)?;
    let setup = setup.map(|s| s.inner.clone());
    let report = py
        .detach(|| typ::poincare_mc_test(&spec.inner, &f, setup.as_ref(), n, seed))
        .map_err(to_py)?;
    let value = serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

#[pyfunction]
#[pyo3(signature = (epsilon_e=-1.27, gap=1.0, sigma_e=1.0))]
fn stationary_p0_theory(epsilon_e: f64, gap: f64, sigma_e: f64) -> f64 {
    typ::stationary_p0_theory(epsilon_e, gap, sigma_e)
}

#[pyfunction]
fn partial_trace_env(rho: Vec<Vec<Complex64>>, dim_s: usize, dim_e: usize) -> PyResult<Vec<Vec<Complex64>>> {
    let rho = HermitianOperator::new(matrix_from_rows(rho)?).map_err(to_py)?;
    let reduced = typicality_core::linalg::partial_trace_env(&rho, dim_s, dim_e).map_err(to_py)?;
    Ok(matrix_rows(reduced.matrix()))
}

/// Runs an experiment from a JSON config string and returns its summary.
#[pyfunction]
#[pyo3(signature = (config_json, mode=None))]
fn run_experiment<'py>(py: Python<'py>, config_json: &str, mode: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let config = ExperimentConfig::from_json_str(config_json).map_err(to_py)?;
    let requested = mode.map(|m| m.parse::<Mode>()).transpose().map_err(to_py)?;
    let mode = config.resolve_mode(requested).map_err(to_py)?;
    let summary = py.detach(|| experiment::run(&config, mode)).map_err(to_py)?;
    let value = serde_json::to_value(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

#[pymodule]
fn typicality(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnsembleSpec>()?;
    m.add_class::<PySystemSetup>()?;
    m.add_function(wrap_pyfunction!(run_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(exact_commutator_norm_sq, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_report, m)?)?;
    m.add_function(wrap_pyfunction!(poincare_mc_test, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_p0_theory, m)?)?;
    m.add_function(wrap_pyfunction!(partial_trace_env, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
