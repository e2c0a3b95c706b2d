//! Python bindings: problems, time grids, integration, audits and reduction.
//!
//! States cross the boundary as lists of floats; matrices as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use structint::audit::{self, Reference};
use structint::galerkin;
use structint::problems::{self, CahnHilliardParams, MqsParams, ProblemBundle};
use structint::{EvolutionProblem, NewtonConfig, State};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn state(v: Vec<f64>) -> State {
    State::from_vec(v)
}

fn to_vec(u: &State) -> Vec<f64> {
    u.iter().copied().collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn newton(tolerance: f64, max_iterations: usize) -> NewtonConfig {
    NewtonConfig {
        tolerance,
        max_iterations,
        ..NewtonConfig::default()
    }
}

/// An evolution problem `C(u) u' = -H'(u) + f(t, u)`, optionally with the
/// metadata of a ready-made example.
#[pyclass(module = "structint", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Problem {
    problem: EvolutionProblem,
    bundle: Option<ProblemBundle>,
}

impl Problem {
    fn from_bundle(bundle: ProblemBundle) -> Self {
        Self {
            problem: bundle.problem.clone(),
            bundle: Some(bundle),
        }
    }

    fn bundle(&self) -> PyResult<&ProblemBundle> {
        self.bundle
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("reduced problems carry no example metadata"))
    }
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn harmonic_oscillator() -> Self {
        Self::from_bundle(problems::harmonic_oscillator())
    }

    #[staticmethod]
    fn nonlinear_pendulum() -> Self {
        Self::from_bundle(problems::nonlinear_pendulum())
    }

    #[staticmethod]
    fn random_skew_quadratic(n: usize, seed: u64) -> PyResult<Self> {
        problems::random_skew_quadratic(n, seed).map(Self::from_bundle).map_err(value_error)
    }

    #[staticmethod]
    fn quadratic_gradient_flow(a: Vec<Vec<f64>>) -> PyResult<Self> {
        problems::quadratic_gradient_flow(matrix(a)?).map(Self::from_bundle).map_err(value_error)
    }

    #[staticmethod]
    fn double_well(n: usize) -> PyResult<Self> {
        problems::double_well_gradient_flow(n).map(Self::from_bundle).map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (gravity = 1.0))]
    fn constrained_pendulum(gravity: f64) -> Self {
        Self::from_bundle(problems::constrained_pendulum(gravity))
    }

    #[staticmethod]
    #[pyo3(signature = (n_cells = 16, sigma = 1.0, nu0 = 1.0, nu2 = 1.0, source_amplitude = 0.0))]
    fn magnetoquasistatics(
        n_cells: usize,
        sigma: f64,
        nu0: f64,
        nu2: f64,
        source_amplitude: f64,
    ) -> PyResult<Self> {
        let params = MqsParams { n_cells, sigma, nu0, nu2 };
        let current = (source_amplitude != 0.0 && n_cells >= 2)
            .then(|| problems::default_current(n_cells, source_amplitude));
        problems::magnetoquasistatics_1d(params, current)
            .map(Self::from_bundle)
            .map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (n_cells = 64, gamma = 0.01, length = 1.0, mean = 0.0))]
    fn cahn_hilliard(n_cells: usize, gamma: f64, length: f64, mean: f64) -> PyResult<Self> {
        let params = CahnHilliardParams { n_cells, gamma, length, mean };
        problems::cahn_hilliard_1d(params).map(Self::from_bundle).map_err(value_error)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.bundle.as_ref().map_or("reduced", |b| b.name)
    }

    #[getter]
    fn is_skew(&self) -> bool {
        self.problem.flags().skew
    }

    #[getter]
    fn is_spd(&self) -> bool {
        self.problem.flags().spd
    }

    #[pyo3(signature = (seed = 0))]
    fn initial_state(&self, seed: u64) -> PyResult<Vec<f64>> {
        Ok(to_vec(&self.bundle()?.initial_state(seed)))
    }

    fn energy(&self, u: Vec<f64>) -> PyResult<f64> {
        if u.len() != self.problem.dim() {
            return Err(PyValueError::new_err("state has the wrong length"));
        }
        Ok(self.problem.energy(&state(u)))
    }

    fn residual(&self, t: f64, u: Vec<f64>, udot: Vec<f64>) -> PyResult<Vec<f64>> {
        self.problem.residual(t, &state(u), &state(udot)).map(|r| to_vec(&r)).map_err(value_error)
    }

    fn exact_solution(&self, t: f64, u0: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        Ok(self.bundle()?.exact_solution(t, &state(u0)).map(|u| to_vec(&u)))
    }

    /// Smallest Gauss order making the energy identity exact, if any.
    fn min_quadrature_order(&self, k: usize) -> PyResult<Option<usize>> {
        Ok(self.bundle()?.min_quadrature_order(k))
    }

    /// Physical nodal values of a state.
    fn reconstruct(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(to_vec(&self.bundle()?.reconstruct(&state(u))))
    }

    fn __repr__(&self) -> String {
        format!("Problem(name={:?}, dim={})", self.name(), self.dim())
    }
}

#[pyclass(module = "structint", frozen, skip_from_py_object)]
#[derive(Clone)]
struct TimeGrid {
    grid: structint::TimeGrid,
}

#[pymethods]
impl TimeGrid {
    #[staticmethod]
    fn uniform(t_end: f64, steps: usize) -> PyResult<Self> {
        structint::TimeGrid::uniform(t_end, steps).map(|grid| Self { grid }).map_err(value_error)
    }

    /// Grid on `[0, t_end]` whose steps grow geometrically from `first_step`.
    #[staticmethod]
    fn geometric(t_end: f64, steps: usize, first_step: f64) -> PyResult<Self> {
        structint::TimeGrid::geometric(t_end, steps, first_step)
            .map(|grid| Self { grid })
            .map_err(value_error)
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.grid.nodes().to_vec()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.grid.steps()
    }
}

#[pyclass(module = "structint", frozen, skip_from_py_object)]
struct Trajectory {
    trajectory: structint::Trajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.trajectory.times().to_vec()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.trajectory.nodal_states().iter().map(to_vec).collect()
    }

    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.trajectory.energies()
    }

    #[getter]
    fn final_state(&self) -> Vec<f64> {
        to_vec(self.trajectory.final_state())
    }

    /// `u_N(t)` anywhere in the computed range.
    fn evaluate(&self, t: f64) -> PyResult<Vec<f64>> {
        structint::evaluate(&self.trajectory, t).map(|u| to_vec(&u)).map_err(value_error)
    }

    /// Discrete energy identity per interval with an `audit_m`-point rule
    /// (the scheme rule when omitted).
    #[pyo3(signature = (audit_m = None))]
    fn energy_audit<'py>(&self, py: Python<'py>, audit_m: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let quad = match audit_m {
            Some(m) => structint::gauss_legendre(m).map_err(value_error)?,
            None => self.trajectory.quadrature().clone(),
        };
        let report = audit::energy_identity_residual(self.trajectory.problem(), &self.trajectory, &quad)
            .map_err(value_error)?;
        let d = PyDict::new(py);
        d.set_item("energies", report.energies())?;
        d.set_item("work", report.records.iter().map(|r| r.work).collect::<Vec<_>>())?;
        d.set_item("dissipation", report.records.iter().map(|r| r.dissipation).collect::<Vec<_>>())?;
        d.set_item("residuals", report.records.iter().map(|r| r.residual).collect::<Vec<_>>())?;
        d.set_item("max_abs_residual", report.max_abs_residual)?;
        d.set_item("exact_integration", report.exact_integration)?;
        d.set_item("bound", report.bound)?;
        d.set_item("monotonicity_violations", report.monotonicity_violations)?;
        Ok(d)
    }

    /// `max_n |g(u_n) - g(u_0)|` for constrained problems.
    fn constraint_drift(&self) -> PyResult<f64> {
        audit::constraint_drift(&self.trajectory).map_err(value_error)
    }
}

/// Integrates `problem` over `grid` from `u0` with test degree `k` and an
/// `m`-point Gauss-Legendre rule.
#[pyfunction]
#[pyo3(signature = (problem, grid, u0, k, m, newton_tol = 1e-12, newton_max_iter = 25))]
fn integrate(
    py: Python<'_>,
    problem: &Problem,
    grid: &TimeGrid,
    u0: Vec<f64>,
    k: usize,
    m: usize,
    newton_tol: f64,
    newton_max_iter: usize,
) -> PyResult<Trajectory> {
    let quad = structint::gauss_legendre(m).map_err(value_error)?;
    let cfg = newton(newton_tol, newton_max_iter);
    let u0 = state(u0);
    py.detach(|| structint::integrate(&problem.problem, &grid.grid, &u0, k, &quad, &cfg))
        .map(|trajectory| Trajectory { trajectory })
        .map_err(|f| PyRuntimeError::new_err(f.to_string()))
}

/// Nodes and weights of the `m`-point rule on `(0, 1)`.
#[pyfunction]
fn gauss_legendre(m: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let q = structint::gauss_legendre(m).map_err(value_error)?;
    Ok((q.nodes().to_vec(), q.weights().to_vec()))
}

/// Rows `(N, tau, error, order)`; the reference is the closed form when the
/// problem has one and a high-order run otherwise.
#[pyfunction]
#[pyo3(signature = (problem, u0, t_end, k, steps, m))]
fn convergence_study(
    py: Python<'_>,
    problem: &Problem,
    u0: Vec<f64>,
    t_end: f64,
    k: usize,
    steps: Vec<usize>,
    m: usize,
) -> PyResult<Vec<(usize, f64, f64, Option<f64>)>> {
    let u0 = state(u0);
    let reference = match problem.bundle.as_ref().and_then(|b| b.exact_solution(t_end, &u0)) {
        Some(exact) => Reference::Given(exact),
        None => Reference::SelfRun,
    };
    let quad = structint::gauss_legendre(m).map_err(value_error)?;
    let table = py
        .detach(|| {
            audit::convergence_study(
                &problem.problem,
                &u0,
                &reference,
                t_end,
                k,
                &steps,
                &quad,
                &NewtonConfig::default(),
            )
        })
        .map_err(value_error)?;
    Ok(table.rows.iter().map(|r| (r.steps, r.tau, r.error, r.order)).collect())
}

#[pyclass(module = "structint", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Basis {
    basis: galerkin::Basis,
}

#[pymethods]
impl Basis {
    #[new]
    fn new(matrix_rows: Vec<Vec<f64>>) -> PyResult<Self> {
        galerkin::Basis::new(matrix(matrix_rows)?).map(|basis| Self { basis }).map_err(value_error)
    }

    #[staticmethod]
    fn random(n: usize, r: usize, seed: u64) -> PyResult<Self> {
        galerkin::Basis::random(n, r, seed).map(|basis| Self { basis }).map_err(value_error)
    }

    #[staticmethod]
    fn identity(n: usize) -> PyResult<Self> {
        galerkin::Basis::identity(n).map(|basis| Self { basis }).map_err(value_error)
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.basis.matrix())
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.basis.dim(), self.basis.rank())
    }

    fn lift(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.basis.lift(&state(y)).map(|u| to_vec(&u)).map_err(value_error)
    }

    fn project(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.basis.project(&state(u)).map(|y| to_vec(&y)).map_err(value_error)
    }
}

/// Structure-preserving Galerkin reduction onto `range(basis)`.
#[pyfunction]
fn reduce(problem: &Problem, basis: &Basis) -> PyResult<Problem> {
    galerkin::reduce(&problem.problem, &basis.basis)
        .map(|problem| Problem { problem, bundle: None })
        .map_err(value_error)
}

fn counterexample_dict<'py>(
    py: Python<'py>,
    c: &galerkin::CounterexampleInstance,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", c.seed)?;
    d.set_item("mass", c.mass.to_vec())?;
    d.set_item("direction", c.direction.to_vec())?;
    d.set_item("structured_rate", c.structured_rate)?;
    d.set_item("nonstructured_rate", c.nonstructured_rate)?;
    d.set_item("relative_discrepancy", c.relative_discrepancy)?;
    Ok(d)
}

/// Instance with the largest energy-rate discrepancy among `count` seeds.
#[pyfunction]
#[pyo3(signature = (first = 0, count = 1000))]
fn search_counterexample(py: Python<'_>, first: u64, count: u64) -> PyResult<Bound<'_, PyDict>> {
    let c = galerkin::search_counterexample(first, count).map_err(value_error)?;
    counterexample_dict(py, &c)
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("structint".to_string()).chain(args).collect();
    py.detach(|| structint::cli::main_with_args(argv))
}

#[pymodule]
#[pyo3(name = "structint")]
fn structint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<TimeGrid>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Basis>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_legendre, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_study, m)?)?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(search_counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
