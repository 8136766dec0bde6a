//! Python bindings: grids, fields, configs, the propagator and the
//! analysis reports. Reports come back as plain dicts.

use std::path::PathBuf;

use nlsp_core::analysis;
use nlsp_core::config::{parse_config, serialize_config, ScenarioConfig};
use nlsp_core::evolution::{FlowModel, Propagator};
use nlsp_core::field::{group_action, pairing, symplectic_form};
use nlsp_core::model::{charge_momenta, energy_components};
use nlsp_core::report::summarize_run;
use nlsp_core::scenario::{run_scenario_with, RunOptions, ScenarioSetup};
use nlsp_core::{snapshot, ComplexField, Error, ErrorClass, Grid, GroupElement};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(nlsp, GateError, PyException, "A decomposition gate (smallness or overlap) failed.");

fn to_py(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Config => PyValueError::new_err(e.to_string()),
        ErrorClass::Numerical => PyRuntimeError::new_err(e.to_string()),
        ErrorClass::Gate => GateError::new_err(e.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Grid", module = "nlsp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(dim: usize, n: usize, l: f64) -> PyResult<Self> {
        Grid::new(dim, n, l).map(PyGrid).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.points_per_axis()
    }

    #[getter]
    fn half_width(&self) -> f64 {
        self.0.half_width()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Coordinates along one axis.
    fn coords(&self) -> Vec<f64> {
        self.0.axis_coords().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Grid(dim={}, n={}, l={})", self.0.dim(), self.0.points_per_axis(), self.0.half_width())
    }
}

#[pyclass(name = "Field", module = "nlsp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(ComplexField);

#[pymethods]
impl PyField {
    #[new]
    fn new(grid: &PyGrid, re: Vec<f64>, im: Vec<f64>) -> PyResult<Self> {
        ComplexField::from_parts(&grid.0, re, im).map(PyField).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        snapshot::load(&path).map(PyField).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        snapshot::save(&path, &self.0).map_err(to_py)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    #[getter]
    fn re(&self) -> Vec<f64> {
        self.0.re().to_vec()
    }

    #[getter]
    fn im(&self) -> Vec<f64> {
        self.0.im().to_vec()
    }

    fn norm_l2(&self) -> f64 {
        self.0.norm_l2()
    }

    fn norm_h1(&self) -> f64 {
        self.0.norm_h1()
    }

    /// `(Π_1, …, Π_dim, Π_charge)`.
    fn momenta(&self) -> Vec<f64> {
        charge_momenta(&self.0)
    }

    fn pairing(&self, other: &PyField) -> PyResult<f64> {
        pairing(&self.0, &other.0).map_err(to_py)
    }

    fn symplectic(&self, other: &PyField) -> PyResult<f64> {
        symplectic_form(&self.0, &other.0).map_err(to_py)
    }

    /// `e^{iθ}u(x - D)` with `minus_theta = -θ`.
    fn act(&self, shift: Vec<f64>, minus_theta: f64) -> PyResult<Self> {
        if shift.len() != self.0.grid().dim() {
            return Err(PyValueError::new_err("shift length must equal the grid dimension"));
        }
        Ok(PyField(group_action(&self.0, &GroupElement::new(shift, minus_theta))))
    }

    fn __sub__(&self, other: &PyField) -> PyResult<Self> {
        self.0.check_grid(&other.0).map_err(to_py)?;
        Ok(PyField(self.0.sub(&other.0)))
    }
}

#[pyclass(name = "Config", module = "nlsp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(ScenarioConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_config(text).map(PyConfig).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn to_text(&self) -> String {
        serialize_config(&self.0)
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    fn grid(&self) -> PyResult<PyGrid> {
        self.0.build_grid().map(PyGrid).map_err(to_py)
    }

    /// Lab-frame initial data of the scenario.
    fn initial_data(&self) -> PyResult<PyField> {
        let setup = ScenarioSetup::new(&self.0).map_err(to_py)?;
        setup.initial_data(&self.0).map(PyField).map_err(to_py)
    }

    /// `(E₀, E_P, E_V)` of `u` at time `t`.
    fn energies(&self, u: &PyField, t: f64) -> PyResult<(f64, f64, f64)> {
        let params = self.0.params().map_err(to_py)?;
        let e = energy_components(&u.0, &self.0.model.potential, &self.0.model.nonlinearity, t, &params);
        Ok((e.e0, e.ep, e.ev))
    }
}

/// Strang split-step propagator in the lab frame of a config.
#[pyclass(name = "Propagator", module = "nlsp", frozen, skip_from_py_object)]
struct PyPropagator {
    prop: Propagator,
    flow: FlowModel,
}

#[pymethods]
impl PyPropagator {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.0;
        let grid = cfg.build_grid().map_err(to_py)?;
        let params = cfg.params().map_err(to_py)?;
        let prop = Propagator::new(&grid, cfg.scenario.dt, cfg.scenario.frame).map_err(to_py)?;
        let flow = FlowModel::new(cfg.model.potential.clone(), cfg.model.nonlinearity, params);
        Ok(PyPropagator { prop, flow })
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.prop.dt
    }

    fn evolve(&self, py: Python<'_>, u: &PyField, t0: f64, steps: usize) -> PyResult<PyField> {
        let u = u.0.clone();
        py.detach(|| self.prop.evolve(&u, t0, steps, &self.flow)).map(PyField).map_err(to_py)
    }
}

#[pyfunction]
fn ground_states(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let gs = analysis::ground_states(&config.0).map_err(to_py)?;
    to_dict(py, &gs.report)
}

#[pyfunction]
fn soliton(config: &PyConfig) -> PyResult<PyField> {
    let gs = analysis::ground_states(&config.0).map_err(to_py)?;
    gs.phi.map(PyField).ok_or_else(|| PyValueError::new_err("config has no soliton"))
}

#[pyfunction]
fn spectrum(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let sp = analysis::spectrum(&config.0).map_err(to_py)?;
    to_dict(py, &sp.report)
}

#[pyfunction]
fn resonances(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    to_dict(py, &analysis::resonances(&config.0).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (config, samples = 50))]
fn fgr(py: Python<'_>, config: &PyConfig, samples: usize) -> PyResult<Py<PyAny>> {
    to_dict(py, &analysis::fgr(&config.0, samples).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (config, field, t = 0.0))]
fn decompose(py: Python<'_>, config: &PyConfig, field: &PyField, t: f64) -> PyResult<Py<PyAny>> {
    to_dict(py, &analysis::decompose_field(&config.0, &field.0, t).map_err(to_py)?)
}

/// Runs a scenario and returns its metrics; writes a run directory when
/// `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out = None, resume = None))]
fn simulate(py: Python<'_>, config: &PyConfig, out: Option<PathBuf>, resume: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let opts = RunOptions { out_dir: out, resume, verbose: false };
    let cfg = config.0.clone();
    let metrics = py.detach(|| run_scenario_with(&cfg, &opts).and_then(|s| s.metrics())).map_err(to_py)?;
    to_dict(py, &metrics)
}

#[pyfunction]
fn report(py: Python<'_>, run: PathBuf) -> PyResult<Py<PyAny>> {
    to_dict(py, &summarize_run(&run).map_err(to_py)?)
}

#[pymodule]
fn nlsp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPropagator>()?;
    m.add("GateError", m.py().get_type::<GateError>())?;
    m.add_function(wrap_pyfunction!(ground_states, m)?)?;
    m.add_function(wrap_pyfunction!(soliton, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(resonances, m)?)?;
    m.add_function(wrap_pyfunction!(fgr, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
