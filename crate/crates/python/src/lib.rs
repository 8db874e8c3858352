//! Python bindings for the `spinsens` library.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spinsens::analytics::{self, CorrelationSummary, StructureSet};
use spinsens::geometry::GeometryRecord;
use spinsens::network::{self, Topology};
use spinsens::synthesis::{self, SynthesisConfig};
use spinsens::verify::{self, VerifyConfig};

type Rows<'py> = Vec<Bound<'py, PyDict>>;

fn to_py(err: spinsens::Error) -> PyErr {
    match err {
        spinsens::Error::Io(_) | spinsens::Error::Json(_) | spinsens::Error::Csv(_) => {
            PyIOError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Ring or chain of `n` spins with uniform coupling `j`, transferring an
/// excitation from spin `input` to spin `output` (1-based).
#[pyclass(name = "NetworkSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyNetworkSpec {
    inner: network::NetworkSpec,
}

#[pymethods]
impl PyNetworkSpec {
    #[new]
    #[pyo3(signature = (n, input, output, topology = "ring", j = 1.0))]
    fn new(n: usize, input: usize, output: usize, topology: &str, j: f64) -> PyResult<Self> {
        let topology: Topology = topology.parse().map_err(to_py)?;
        let inner = network::NetworkSpec::new(n, topology, j, input, output).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: network::NetworkSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("spec serializes")
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.num_spins
    }

    #[getter]
    fn topology(&self) -> String {
        self.inner.topology.to_string()
    }

    #[getter]
    fn j(&self) -> f64 {
        self.inner.coupling
    }

    #[getter]
    fn input(&self) -> usize {
        self.inner.input_spin
    }

    #[getter]
    fn output(&self) -> usize {
        self.inner.output_spin
    }

    /// Number of uncertainty structures (biases, then couplings).
    fn num_structures(&self) -> usize {
        network::enumerate_structures(&self.inner).len()
    }

    fn __repr__(&self) -> String {
        format!(
            "NetworkSpec(n={}, input={}, output={}, topology='{}', j={})",
            self.inner.num_spins,
            self.inner.input_spin,
            self.inner.output_spin,
            self.inner.topology,
            self.inner.coupling
        )
    }
}

#[pyclass(name = "Controller", frozen, from_py_object)]
#[derive(Clone)]
struct PyController {
    #[pyo3(get)]
    index: usize,
    #[pyo3(get)]
    seed: u64,
    #[pyo3(get)]
    biases: Vec<f64>,
    #[pyo3(get)]
    t_f: f64,
    #[pyo3(get)]
    fidelity: f64,
    #[pyo3(get)]
    converged: bool,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (biases, t_f, index = 1, seed = 0, fidelity = f64::NAN))]
    fn new(biases: Vec<f64>, t_f: f64, index: usize, seed: u64, fidelity: f64) -> Self {
        Self {
            index,
            seed,
            biases,
            t_f,
            fidelity,
            converged: true,
        }
    }

    #[getter]
    fn error(&self) -> f64 {
        1.0 - self.fidelity
    }

    fn __repr__(&self) -> String {
        format!(
            "Controller(index={}, t_f={}, fidelity={})",
            self.index, self.t_f, self.fidelity
        )
    }
}

impl PyController {
    fn to_core(&self, spec: &network::NetworkSpec) -> synthesis::Controller {
        synthesis::Controller {
            biases: self.biases.clone(),
            t_f: self.t_f,
            fidelity: self.fidelity,
            spec: spec.clone(),
            seed: self.seed,
            index: self.index,
            converged: self.converged,
        }
    }
}

impl From<synthesis::Controller> for PyController {
    fn from(c: synthesis::Controller) -> Self {
        Self {
            index: c.index,
            seed: c.seed,
            biases: c.biases,
            t_f: c.t_f,
            fidelity: c.fidelity,
            converged: c.converged,
        }
    }
}

fn record_dict<'py>(py: Python<'py>, r: &GeometryRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("controller_index", r.controller_index)?;
    d.set_item("structure_index", r.structure_index)?;
    d.set_item("F", r.fidelity)?;
    d.set_item("e", r.error)?;
    d.set_item("zeta", r.zeta)?;
    d.set_item("abs_zeta", r.zeta.abs())?;
    d.set_item("f_n", r.f_n)?;
    d.set_item("tf", r.t_f)?;
    d.set_item("norm_K", r.norm_k)?;
    d.set_item("norm_Rs", r.norm_rs)?;
    d.set_item("cos_phi", r.cos_phi)?;
    d.set_item("sin_phi", r.sin_phi)?;
    d.set_item("cos_theta", r.cos_theta)?;
    d.set_item("identity_residual", r.identity_residual)?;
    d.set_item("pst_flag", r.pst)?;
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, s: &CorrelationSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("structure_index", s.structure_index)?;
    d.set_item("n_records", s.count)?;
    d.set_item("pearson_loglog", s.pearson_r_loglog)?;
    d.set_item("kendall_tau_e_vs_sinphi", s.kendall_tau)?;
    d.set_item("mean_norm_K", s.mean_norm_k)?;
    d.set_item("var_norm_K", s.var_norm_k)?;
    Ok(d)
}

/// Hamiltonian matrix (rows) for the given biases.
#[pyfunction]
fn build_hamiltonian(spec: &PyNetworkSpec, biases: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let h = network::build_hamiltonian(&spec.inner, &biases).map_err(to_py)?;
    Ok(h.matrix
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect())
}

/// `(F, e)` for the basis-state transfer at read-out time `t_f`, through the
/// Bloch representation.
#[pyfunction]
fn fidelity(spec: &PyNetworkSpec, biases: Vec<f64>, t_f: f64) -> PyResult<(f64, f64)> {
    let h = network::build_hamiltonian(&spec.inner, &biases).map_err(to_py)?;
    let sys = spinsens::BlochSystem::for_transfer(&spec.inner, &h, t_f).map_err(to_py)?;
    let phi = spinsens::propagator(&sys.a, t_f).map_err(to_py)?;
    Ok(spinsens::fidelity(&sys.rf, &phi, &sys.r0))
}

/// `|<out| exp(-iHt) |in>|^2` computed directly in Hilbert space.
#[pyfunction]
fn hilbert_fidelity(spec: &PyNetworkSpec, biases: Vec<f64>, t_f: f64) -> PyResult<f64> {
    spinsens::hilbert::spec_fidelity(&spec.inner, &biases, t_f).map_err(to_py)
}

/// One sensitivity/geometry record per uncertainty structure.
#[pyfunction]
fn sensitivity_records<'py>(
    py: Python<'py>,
    spec: &PyNetworkSpec,
    biases: Vec<f64>,
    t_f: f64,
) -> PyResult<Rows<'py>> {
    let set = StructureSet::new(&spec.inner).map_err(to_py)?;
    let records =
        analytics::evaluate_controller(&spec.inner, &set, &biases, t_f, 1).map_err(to_py)?;
    records.iter().map(|r| record_dict(py, r)).collect()
}

/// Multistart fidelity maximization; returns controllers sorted by
/// fidelity, best first.
#[pyfunction]
#[pyo3(signature = (spec, restarts = 100, seed = 0, t_f_range = (1.0, 50.0), bias_range = (0.0, 10.0), tolerance = 1e-8, max_iter = 200))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    py: Python<'_>,
    spec: &PyNetworkSpec,
    restarts: usize,
    seed: u64,
    t_f_range: (f64, f64),
    bias_range: (f64, f64),
    tolerance: f64,
    max_iter: usize,
) -> PyResult<Vec<PyController>> {
    let config = SynthesisConfig {
        restarts,
        t_f_range,
        bias_range,
        tolerance,
        seed,
        max_iter,
        ..SynthesisConfig::default()
    };
    let spec = spec.inner.clone();
    let found = py
        .detach(move || synthesis::synthesize_ensemble(&spec, &config))
        .map_err(to_py)?;
    Ok(found.into_iter().map(PyController::from).collect())
}

/// Records and per-structure summaries for an ensemble.
#[pyfunction]
fn analyze<'py>(
    py: Python<'py>,
    spec: &PyNetworkSpec,
    controllers: Vec<PyController>,
) -> PyResult<(Rows<'py>, Rows<'py>)> {
    let core: Vec<_> = controllers.iter().map(|c| c.to_core(&spec.inner)).collect();
    let inner = spec.inner.clone();
    let analysis = py
        .detach(move || analytics::analyze(&inner, &core))
        .map_err(to_py)?;
    let records = analysis
        .records
        .iter()
        .map(|r| record_dict(py, r))
        .collect::<PyResult<_>>()?;
    let summaries = analysis
        .summaries
        .iter()
        .map(|s| summary_dict(py, s))
        .collect::<PyResult<_>>()?;
    Ok((records, summaries))
}

/// Runs the invariant suite; returns `(all_passed, report_table)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 100, n = None, pst = false))]
fn run_verify(
    py: Python<'_>,
    seed: u64,
    instances: usize,
    n: Option<usize>,
    pst: bool,
) -> PyResult<(bool, String)> {
    let config = VerifyConfig {
        seed,
        instances,
        n,
        pst,
        ..VerifyConfig::default()
    };
    let report = py
        .detach(move || verify::run_verify(&config))
        .map_err(to_py)?;
    Ok((report.all_passed(), report.to_string()))
}

#[pymodule]
fn pyspinsens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyNetworkSpec>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(build_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(hilbert_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_records, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
