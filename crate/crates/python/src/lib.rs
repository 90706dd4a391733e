//! Python bindings: meshes, experiment presets, the discrete optimality
//! system, estimators and the adaptive loop.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dirac_afem::adapt::{fit_loglog, mark_values, run_afem, AfemOptions, AfemRecord, StopCriteria};
use dirac_afem::estimators::{estimate, log_factor as mesh_log_factor};
use dirac_afem::fem::P1Space;
use dirac_afem::manufactured::{exact_errors, preset_with, ExperimentPreset};
use dirac_afem::mesh::{build_initial_mesh, ensure_source_separation, refine, uniform_refine, DomainPreset, SimplicialMesh};
use dirac_afem::ocp::{solve_active_set, vi_residual, OcpSolution};
use dirac_afem::quadrature::ElementQuadrature;
use dirac_afem::weights::DEFAULT_DEPTH;
use dirac_afem::{Error, Point};

create_exception!(dirac_afem_py, AfemError, PyException);

fn to_py(e: Error) -> PyErr {
    AfemError::new_err(e.to_string())
}

fn point(coords: &[f64]) -> PyResult<Point> {
    match coords {
        [x, y] => Ok(Point::new(*x, *y, 0.0)),
        [x, y, z] => Ok(Point::new(*x, *y, *z)),
        _ => Err(AfemError::new_err("points need two or three coordinates")),
    }
}

fn coords(p: &Point, dim: usize) -> Vec<f64> {
    p.iter().take(dim).copied().collect()
}

/// A conforming simplicial mesh in two or three dimensions.
#[pyclass(frozen, name = "Mesh")]
pub struct PyMesh {
    inner: Arc<SimplicialMesh>,
}

impl PyMesh {
    fn wrap(mesh: SimplicialMesh) -> Self {
        Self { inner: Arc::new(mesh) }
    }
}

#[pymethods]
impl PyMesh {
    /// Builds a mesh from vertex coordinates and element vertex lists.
    #[new]
    fn new(vertices: Vec<Vec<f64>>, elements: Vec<Vec<usize>>) -> PyResult<Self> {
        let dim = vertices.first().map_or(2, Vec::len);
        let pts = vertices.iter().map(|v| point(v)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self::wrap(SimplicialMesh::new(dim, pts, &elements).map_err(to_py)?))
    }

    /// Seed mesh of a named domain: unit_square, lshape2d, unit_cube, lshape3d.
    #[staticmethod]
    fn domain(name: &str) -> PyResult<Self> {
        let preset: DomainPreset = name.parse().map_err(to_py)?;
        Ok(Self::wrap(build_initial_mesh(preset)))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.n_vertices()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.n_elements()
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        let d = self.inner.dim();
        self.inner.vertices().iter().map(|p| coords(p, d)).collect()
    }

    fn elements(&self) -> Vec<Vec<usize>> {
        (0..self.inner.n_elements()).map(|t| self.inner.element_vertices(t).to_vec()).collect()
    }

    fn h_min(&self) -> f64 {
        self.inner.h_min()
    }

    fn h_max(&self) -> f64 {
        self.inner.h_max()
    }

    fn total_volume(&self) -> f64 {
        self.inner.total_volume()
    }

    fn log_factor(&self) -> f64 {
        mesh_log_factor(&self.inner)
    }

    /// Bisects the marked elements and restores conformity.
    fn refine(&self, marked: Vec<usize>) -> PyResult<Self> {
        Ok(Self::wrap(refine(&self.inner, &marked).map_err(to_py)?))
    }

    fn uniform_refine(&self) -> Self {
        Self::wrap(uniform_refine(&self.inner))
    }

    /// Refines until no vertex patch holds two of the given points.
    fn separate_sources(&self, points: Vec<Vec<f64>>) -> PyResult<Self> {
        let pts = points.iter().map(|v| point(v)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self::wrap(ensure_source_separation(&self.inner, &pts).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Mesh(dim={}, n_vertices={}, n_elements={})", self.inner.dim(), self.inner.n_vertices(), self.inner.n_elements())
    }
}

/// A named experiment with its problem data.
#[pyclass(frozen, name = "Preset")]
pub struct PyPreset {
    inner: ExperimentPreset,
}

/// A discrete optimal state, adjoint and control on one mesh.
#[pyclass(frozen, name = "Solution")]
pub struct PySolution {
    inner: OcpSolution,
    preset: ExperimentPreset,
}

fn record_dict<'py>(py: Python<'py>, r: &AfemRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iter)?;
    d.set_item("ndof", r.ndof)?;
    d.set_item("n_elem", r.n_elem)?;
    for name in ["ey", "ep", "eocp", "log_factor", "err_y", "err_p", "err_u", "err_total", "effectivity"] {
        d.set_item(name, r.field(name))?;
    }
    d.set_item("vi_residual", r.vi_residual)?;
    d.set_item("max_solve_residual", r.max_solve_residual)?;
    Ok(d)
}

#[pymethods]
impl PyPreset {
    /// `name` is one of example1 .. example6; `lam` and `alpha` override
    /// the defaults.
    #[new]
    #[pyo3(signature = (name, lam=None, alpha=None))]
    fn new(name: &str, lam: Option<f64>, alpha: Option<f64>) -> PyResult<Self> {
        Ok(Self { inner: preset_with(name, lam, alpha).map_err(to_py)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.problem.lambda
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.problem.alpha
    }

    #[getter]
    fn sources(&self) -> Vec<Vec<f64>> {
        let d = self.inner.dim();
        self.inner.problem.sources.iter().map(|p| coords(p, d)).collect()
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.inner.problem.lower.clone()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.inner.problem.upper.clone()
    }

    /// Exact optimal control, or `None` when the solution is unknown.
    #[getter]
    fn exact_control(&self) -> Option<Vec<f64>> {
        self.inner.case.as_ref().map(|c| c.control.clone())
    }

    fn desired_state(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok((self.inner.problem.desired_state)(&point(&x)?))
    }

    fn seed_mesh(&self) -> PyResult<PyMesh> {
        Ok(PyMesh::wrap(self.inner.seed_mesh().map_err(to_py)?))
    }

    /// Solves the discrete optimality system on `mesh`.
    #[pyo3(signature = (mesh, tol=1e-10, max_iter=50))]
    fn solve(&self, mesh: &PyMesh, tol: f64, max_iter: usize) -> PyResult<PySolution> {
        let space = P1Space::new(mesh.inner.clone());
        let sol = solve_active_set(&self.inner.problem, &space, tol, max_iter).map_err(to_py)?;
        Ok(PySolution { inner: sol, preset: self.inner.clone() })
    }

    /// Runs the adaptive loop from the seed mesh; returns one dict per
    /// iteration.
    #[pyo3(signature = (max_ndof=None, max_iter=None, theta=0.5))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        max_ndof: Option<usize>,
        max_iter: Option<usize>,
        theta: f64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let dim = self.inner.dim();
        let mut stop = StopCriteria::for_dim(dim);
        if let Some(n) = max_ndof {
            stop.max_ndof = n;
        }
        if let Some(n) = max_iter {
            stop.max_iter = n;
        }
        let opts = AfemOptions { theta, ..AfemOptions::for_dim(dim) };
        let seed = self.inner.seed_mesh().map_err(to_py)?;
        let records = run_afem(&self.inner.problem, &seed, &stop, self.inner.case.as_ref(), &opts)
            .map_err(|f| AfemError::new_err(f.to_string()))?;
        records.iter().map(|r| record_dict(py, r)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Preset({:?}, lam={}, alpha={})", self.inner.name, self.inner.problem.lambda, self.inner.problem.alpha)
    }
}

#[pymethods]
impl PySolution {
    #[getter]
    fn control(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.inner.y.values().to_vec()
    }

    #[getter]
    fn adjoint(&self) -> Vec<f64> {
        self.inner.p.values().to_vec()
    }

    #[getter]
    fn active_lower(&self) -> Vec<usize> {
        self.inner.active_lower.clone()
    }

    #[getter]
    fn active_upper(&self) -> Vec<usize> {
        self.inner.active_upper.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn vi_residual(&self) -> PyResult<f64> {
        vi_residual(&self.inner, &self.preset.problem).map_err(to_py)
    }

    fn evaluate_state(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.y.evaluate(&point(&x)?).map_err(to_py)
    }

    fn evaluate_adjoint(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.p.evaluate(&point(&x)?).map_err(to_py)
    }

    /// Per-element and global indicators.
    fn estimate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let problem = &self.preset.problem;
        let quad = ElementQuadrature::new(self.preset.dim(), 6).map_err(to_py)?.with_singular_points(&problem.sources);
        let f = estimate(&self.inner, problem, &quad).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("ey_sq", f.ey_sq)?;
        d.set_item("ep", f.ep)?;
        d.set_item("combined", f.combined)?;
        d.set_item("ey", f.ey_global)?;
        d.set_item("ep_global", f.ep_global)?;
        d.set_item("eocp", f.eocp_global)?;
        d.set_item("log_factor", f.log_factor)?;
        Ok(d)
    }

    /// Exact error components for manufactured presets, else `None`.
    fn exact_errors<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(case) = &self.preset.case else { return Ok(None) };
        let e = exact_errors(&self.inner, case, DEFAULT_DEPTH).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("err_y", e.err_y)?;
        d.set_item("err_p", e.err_p)?;
        d.set_item("err_u", e.err_u)?;
        d.set_item("err_total", e.err_total)?;
        Ok(Some(d))
    }
}

/// Least-squares slope of `log(values)` against `log(ndof)` over the last
/// `window` points.
#[pyfunction]
fn fit_rate(ndof: Vec<f64>, values: Vec<f64>, window: usize) -> PyResult<f64> {
    if ndof.len() != values.len() {
        return Err(AfemError::new_err("ndof and values differ in length"));
    }
    fit_loglog(&ndof, &values, window).map_err(to_py)
}

/// Indices above `theta` times the maximum, plus the maximizers.
#[pyfunction]
#[pyo3(signature = (values, theta=0.5))]
fn mark(values: Vec<f64>, theta: f64) -> Vec<usize> {
    mark_values(&values, theta)
}

#[pymodule]
fn dirac_afem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AfemError", m.py().get_type::<AfemError>())?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyPreset>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(mark, m)?)?;
    Ok(())
}
