//! Python bindings for `nlch-core`.
//!
//! Fields cross the boundary as flat lists in row-major cell order; reports
//! come back as plain dicts.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use nlch_core::boundary::{direction_vector, lemma_integral_exponent, DirectionOptions, Frame, LemmaOptions};
use nlch_core::diagnostics::energy;
use nlch_core::elliptic::EllipticProblem;
use nlch_core::expr::Expr;
use nlch_core::io::{load_config, simulate as simulate_scenario, ScenarioError};
use nlch_core::timestepper::{run, step, RunConfig, SchemeConfig};
use nlch_core::{Grid, Kernel, Model, Potential, State};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(v).map_err(runtime_err)?)
}

/// Uniform cell-centred grid on a box anchored at the origin.
#[pyclass(name = "Grid", module = "nlch", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(extents: Vec<f64>, cells: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: Grid::new(&extents, &cells).map_err(value_err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn cells(&self) -> Vec<usize> {
        self.inner.cells().to_vec()
    }

    #[getter]
    fn extents(&self) -> Vec<f64> {
        self.inner.extents().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Cell centres as `[x1, x2]` pairs (`x2 = 0` in 1D).
    fn centers(&self) -> Vec<[f64; 2]> {
        self.inner.centers()
    }

    /// Samples an expression in `x1`, `x2` at the cell centres.
    fn sample(&self, expression: &str) -> PyResult<Vec<f64>> {
        let e = Expr::parse(expression).map_err(value_err)?;
        Ok(self.inner.sample(|x| e.eval(x, &[])))
    }

    fn __repr__(&self) -> String {
        format!("Grid(extents={:?}, cells={:?})", self.inner.extents(), self.inner.cells())
    }
}

/// Interaction kernel `k(x, y, z)`.
#[pyclass(name = "Kernel", module = "nlch", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: Kernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    #[pyo3(signature = (alpha, amplitude = 1.0))]
    fn homogeneous(alpha: f64, amplitude: f64) -> PyResult<Self> {
        Ok(Self { inner: Kernel::homogeneous(alpha, amplitude).map_err(value_err)? })
    }

    /// `amplitude * g(x, y) / |z|^(n+alpha)` with `c0 <= k|z|^(n+alpha) <= C0`.
    #[staticmethod]
    #[pyo3(signature = (alpha, modulation, c0, big_c0, amplitude = 1.0))]
    fn modulated(alpha: f64, modulation: &str, c0: f64, big_c0: f64, amplitude: f64) -> PyResult<Self> {
        let g = Expr::parse(modulation).map_err(value_err)?;
        Ok(Self { inner: Kernel::modulated(alpha, amplitude, g, c0, big_c0).map_err(value_err)? })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn amplitude(&self) -> f64 {
        self.inner.amplitude()
    }

    fn value(&self, x: Vec<f64>, y: Vec<f64>) -> f64 {
        self.inner.value(&x, &y)
    }

    #[pyo3(signature = (grid, samples = 1000, seed = 0))]
    fn verify_bounds<'py>(&self, py: Python<'py>, grid: &PyGrid, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.verify_bounds(&grid.inner, samples, seed))
    }
}

/// Bulk free energy density.
#[pyclass(name = "Potential", module = "nlch", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPotential {
    inner: Potential,
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    fn logarithmic(t_abs: f64, t_crit: f64) -> PyResult<Self> {
        Ok(Self { inner: Potential::logarithmic(t_abs, t_crit).map_err(value_err)? })
    }

    /// `f(s) = Σ coeffs[k] s^k` on `[a, b]`.
    #[staticmethod]
    fn polynomial(coeffs: Vec<f64>, a: f64, b: f64) -> PyResult<Self> {
        Ok(Self { inner: Potential::polynomial(coeffs, a, b).map_err(value_err)? })
    }

    #[getter]
    fn interval(&self) -> (f64, f64) {
        self.inner.interval()
    }

    #[getter]
    fn split_constant(&self) -> f64 {
        self.inner.split_constant()
    }

    /// `f(s)`; infinite outside the closed interval.
    fn f(&self, s: f64) -> f64 {
        self.inner.eval_f(s).value()
    }
}

/// Assembled discrete model.
#[pyclass(name = "Model", module = "nlch", frozen, skip_from_py_object)]
struct PyModel {
    inner: Arc<Model>,
}

impl PyModel {
    fn state(&self, c: Vec<f64>, time: f64) -> PyResult<State> {
        if c.len() != self.inner.len() {
            return Err(PyValueError::new_err(format!("expected {} cells, got {}", self.inner.len(), c.len())));
        }
        State::new(c, time).map_err(value_err)
    }

    fn scheme(&self, dt: f64, theta: f64) -> PyResult<SchemeConfig> {
        let cfg = SchemeConfig::new(dt).with_theta(theta);
        let errs = cfg.validate(self.inner.potential.interval());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(PyValueError::new_err(errs.join("; ")))
        }
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (grid, kernel, potential, refinement = 4))]
    fn new(py: Python<'_>, grid: &PyGrid, kernel: &PyKernel, potential: &PyPotential, refinement: usize) -> PyResult<Self> {
        let (g, k, p) = (grid.inner.clone(), kernel.inner.clone(), potential.inner.clone());
        let model = py.detach(|| Model::new(g, k, p, refinement)).map_err(value_err)?;
        Ok(Self { inner: Arc::new(model) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Energy split into nonlocal, gradient and bulk parts.
    #[pyo3(signature = (c, theta = 0.0))]
    fn energy<'py>(&self, py: Python<'py>, c: Vec<f64>, theta: f64) -> PyResult<Bound<'py, PyAny>> {
        let c = self.state(c, 0.0)?.c;
        to_py(py, &energy(&self.inner, &c, theta))
    }

    #[pyo3(signature = (c, theta = 0.0))]
    fn chemical_potential(&self, c: Vec<f64>, theta: f64) -> PyResult<Vec<f64>> {
        let c = self.state(c, 0.0)?.c;
        Ok(self.inner.chemical_potential(&c, theta))
    }

    /// One time step; returns `(c_next, report)`.
    #[pyo3(signature = (c, dt, theta = 0.0, time = 0.0))]
    fn step<'py>(&self, py: Python<'py>, c: Vec<f64>, dt: f64, theta: f64, time: f64) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
        let state = self.state(c, time)?;
        let cfg = self.scheme(dt, theta)?;
        let model = Arc::clone(&self.inner);
        let (next, report) = py.detach(move || step(&model, &state, &cfg)).map_err(runtime_err)?;
        Ok((next.c, to_py(py, &report)?))
    }

    /// Marches to `t_final`; returns a dict with `samples`, `c` and run totals.
    #[pyo3(signature = (c, dt, t_final, theta = 0.0, sample_every = 1, max_halvings = 20))]
    #[allow(clippy::too_many_arguments)]
    fn run<'py>(
        &self,
        py: Python<'py>,
        c: Vec<f64>,
        dt: f64,
        t_final: f64,
        theta: f64,
        sample_every: usize,
        max_halvings: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let state = self.state(c, 0.0)?;
        let cfg = self.scheme(dt, theta)?;
        let rc = RunConfig { t_final, sample_every: sample_every.max(1), max_halvings };
        let model = Arc::clone(&self.inner);
        let traj = py.detach(move || run(&model, &state, &cfg, &rc, |_, _| {})).map_err(runtime_err)?;
        let out = serde_json::json!({
            "samples": traj.samples,
            "step_energies": traj.step_energies,
            "max_mass_drift": traj.max_mass_drift,
            "steps": traj.steps,
            "halvings": traj.halvings,
            "c": traj.final_state.c,
            "time": traj.final_state.time,
        });
        json_to_py(py, &out)
    }

    /// Solves `(θA + L)u = g` for mean-zero `g`.
    #[pyo3(signature = (g, theta = 0.0, tol = 1e-10))]
    fn solve_elliptic<'py>(&self, py: Python<'py>, g: Vec<f64>, theta: f64, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let model = Arc::clone(&self.inner);
        let sol = py
            .detach(move || EllipticProblem::new(&model.coupling, &model.neumann, theta, g, tol).and_then(|p| p.solve()))
            .map_err(value_err)?;
        to_py(py, &sol)
    }
}

/// Boundary direction vector at the centre of the first face of the unit box.
#[pyfunction]
#[pyo3(signature = (kernel, ladder, dim = 2, cells_per_delta = 8))]
fn boundary_direction<'py>(py: Python<'py>, kernel: &PyKernel, ladder: Vec<f64>, dim: usize, cells_per_delta: usize) -> PyResult<Bound<'py, PyAny>> {
    let grid = Grid::new(&vec![1.0; dim], &vec![4; dim]).map_err(value_err)?;
    let frame = Frame::center_face(&grid);
    let opts = DirectionOptions { cells_per_delta, ..DirectionOptions::default() };
    let k = kernel.inner.clone();
    let report = py.detach(move || direction_vector(&k, &frame, &ladder, &opts)).map_err(value_err)?;
    to_py(py, &report)
}

/// Fitted growth exponent of the half-ball pair integral.
#[pyfunction]
fn lemma_exponent<'py>(py: Python<'py>, dim: usize, r: f64, ladder: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let fit = py.detach(move || lemma_integral_exponent(dim, r, &ladder, &LemmaOptions::default())).map_err(value_err)?;
    to_py(py, &fit)
}

/// Runs a TOML scenario and returns the run summary.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let summary = py
        .detach(move || -> Result<_, ScenarioError> { simulate_scenario(&load_config(&config)?) })
        .map_err(|e| if e.is_numerical() { runtime_err(e) } else { value_err(e) })?;
    to_py(py, &summary)
}

#[pymodule]
pub fn nlch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(boundary_direction, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
