//! Petrov-Galerkin time stepping.
//!
//! On each interval `[t_{n-1}, t_n]` the trial function `u_N` is a
//! polynomial of degree `k + 1`, continuous across steps, and the equation
//! is tested against the degree-`k` Lagrange polynomials `l_i` at the
//! Gauss-Legendre nodes `c_1 .. c_{k+1}`. Integrals are replaced by a
//! quadrature rule of order `m >= k + 1`:
//!
//! ```text
//! tau * sum_q w_q l_i(g_q) [C(u_q) u'_q + H'(u_q) - f(t_q, u_q)] = 0,   i = 1 .. k+1
//! ```
//!
//! The unknowns are the values `d_j` of `u_N'` at the nodes `c_j`, so that
//! `u_N(t_{n-1} + s tau) = u_{n-1} + tau sum_j d_j int_0^s l_j`. Algebraic
//! coordinates (zero column of `C`) instead carry values `a_j` of a
//! degree-`k` polynomial that is allowed to jump between steps.
//!
//! With `k = 0` this is the averaged discrete gradient scheme, see
//! [`discrete_gradient_step`].

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::newton::{newton_solve_with, NewtonConfig, Predictor};
use crate::problem::{EvolutionProblem, State};
use crate::quadrature::{check_distinct, gauss_legendre, lagrange_unchecked, QuadratureRule};

/// Strictly increasing time nodes `t_0 < t_1 < ... < t_N`, `N >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument(
                "time grid needs at least one step".into(),
            ));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "time grid nodes must be finite".into(),
            ));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "time grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { nodes })
    }

    /// `steps` equal intervals covering `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs t_end > 0 and steps >= 1 (got {t_end}, {steps})"
            )));
        }
        let tau = t_end / steps as f64;
        let mut nodes: Vec<f64> = (0..steps).map(|n| n as f64 * tau).collect();
        nodes.push(t_end);
        Self::new(nodes)
    }

    /// `steps` intervals on `[0, t_end]` growing by a constant factor, the
    /// first of length `first_step`. Needs `first_step <= t_end / steps`.
    pub fn geometric(t_end: f64, steps: usize, first_step: f64) -> Result<Self> {
        if steps == 0
            || !(t_end > 0.0)
            || !(first_step > 0.0)
            || first_step * steps as f64 > t_end * (1.0 + 1e-12)
        {
            return Err(Error::InvalidArgument(format!(
                "geometric grid needs t_end > 0, steps >= 1 and 0 < first_step <= t_end / steps \
                 (got {t_end}, {steps}, {first_step})"
            )));
        }
        let total =
            |r: f64| -> f64 { (0..steps).map(|i| r.powi(i as i32)).sum::<f64>() * first_step };
        let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
        while total(hi) < t_end {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < t_end {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ratio = 0.5 * (lo + hi);
        let mut nodes = Vec::with_capacity(steps + 1);
        let mut t = 0.0;
        nodes.push(t);
        for i in 0..steps {
            t += first_step * ratio.powi(i as i32);
            nodes.push(t);
        }
        // absorb the bisection error proportionally
        let scale = t_end / t;
        for x in &mut nodes {
            *x *= scale;
        }
        nodes[steps] = t_end;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of intervals `N`.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// `tau_n = t_n - t_{n-1}` for `n` in `1..=N`.
    pub fn step_size(&self, n: usize) -> f64 {
        self.nodes[n] - self.nodes[n - 1]
    }
}

/// The polynomial `u_N` on one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    t_start: f64,
    tau: f64,
    start: State,
    nodes: Vec<f64>,
    coefficients: Vec<State>,
    algebraic: Vec<bool>,
    iterations: usize,
}

impl StepSolution {
    /// Assemble a step from raw coefficients. `nodes` are the parameter
    /// nodes `c_j` in `(0, 1)`, one coefficient vector per node.
    pub fn new(
        t_start: f64,
        tau: f64,
        start: State,
        nodes: Vec<f64>,
        coefficients: Vec<State>,
        algebraic: Vec<bool>,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidArgument(
                "a step needs at least one node".into(),
            ));
        }
        check_distinct(&nodes)?;
        check_len("step coefficients", nodes.len(), coefficients.len())?;
        check_len("step mask", start.len(), algebraic.len())?;
        for c in &coefficients {
            check_len("step coefficient", start.len(), c.len())?;
        }
        Ok(Self {
            t_start,
            tau,
            start,
            nodes,
            coefficients,
            algebraic,
            iterations: 0,
        })
    }

    /// Polynomial degree `k` of the test space (trial degree is `k + 1`).
    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.tau
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn start_value(&self) -> &State {
        &self.start
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Derivative values (differential coordinates) or values (algebraic
    /// coordinates) at the parameter nodes.
    pub fn coefficients(&self) -> &[State] {
        &self.coefficients
    }

    pub fn newton_iterations(&self) -> usize {
        self.iterations
    }

    /// `u_N(t_start + s tau)` for `s` in `[0, 1]`.
    pub fn value_at(&self, s: f64) -> State {
        let integrated = integrated_lagrange(&self.nodes, s);
        let mut u = self.start.clone();
        for (j, coeff) in self.coefficients.iter().enumerate() {
            let lj = lagrange_unchecked(&self.nodes, j, s);
            for (c, alg) in self.algebraic.iter().enumerate() {
                if *alg {
                    if j == 0 {
                        u[c] = 0.0;
                    }
                    u[c] += lj * coeff[c];
                } else {
                    u[c] += self.tau * integrated[j] * coeff[c];
                }
            }
        }
        u
    }

    /// `d/dt u_N(t_start + s tau)`; algebraic entries are zero.
    pub fn derivative_at(&self, s: f64) -> State {
        let mut du = State::zeros(self.start.len());
        for (j, coeff) in self.coefficients.iter().enumerate() {
            du.axpy(lagrange_unchecked(&self.nodes, j, s), coeff, 1.0);
        }
        for (c, alg) in self.algebraic.iter().enumerate() {
            if *alg {
                du[c] = 0.0;
            }
        }
        du
    }

    /// Left limit at the end of the interval.
    pub fn end_value(&self) -> State {
        self.value_at(1.0)
    }
}

/// `int_0^s l_j(r) dr` for every basis index `j`, exact since `l_j` has
/// degree `nodes.len() - 1`.
fn integrated_lagrange(nodes: &[f64], s: f64) -> Vec<f64> {
    let rule = gauss_legendre(nodes.len()).expect("node count within quadrature range");
    (0..nodes.len())
        .map(|j| {
            s * rule
                .iter()
                .map(|(g, w)| w * lagrange_unchecked(nodes, j, s * g))
                .sum::<f64>()
        })
        .collect()
}

/// Lagrange tables at the quadrature nodes for one step.
struct StepTables {
    nodes: Vec<f64>,
    quad: QuadratureRule,
    /// `l_j(g_q)`, indexed `[q][j]`
    basis: Vec<Vec<f64>>,
    /// `int_0^{g_q} l_j`, indexed `[q][j]`
    integrated: Vec<Vec<f64>>,
}

impl StepTables {
    fn new(nodes: &[f64], quad: &QuadratureRule) -> Self {
        let basis = quad
            .nodes()
            .iter()
            .map(|&g| {
                (0..nodes.len())
                    .map(|j| lagrange_unchecked(nodes, j, g))
                    .collect()
            })
            .collect();
        let integrated = quad
            .nodes()
            .iter()
            .map(|&g| integrated_lagrange(nodes, g))
            .collect();
        Self {
            nodes: nodes.to_vec(),
            quad: quad.clone(),
            basis,
            integrated,
        }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

/// The nonlinear system of one Petrov-Galerkin step.
struct StepSystem<'a> {
    problem: &'a EvolutionProblem,
    t_start: f64,
    tau: f64,
    start: &'a State,
    tables: StepTables,
    algebraic: Vec<bool>,
}

impl StepSystem<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn coefficient(&self, x: &DVector<f64>, j: usize) -> State {
        let n = self.dim();
        x.rows(j * n, n).into_owned()
    }

    /// `(u_N, u_N')` at quadrature node `q`.
    fn state_at(&self, x: &DVector<f64>, q: usize) -> (State, State) {
        let n = self.dim();
        let mut u = self.start.clone();
        let mut du = State::zeros(n);
        for (c, &alg) in self.algebraic.iter().enumerate() {
            if alg {
                u[c] = 0.0;
            }
        }
        for j in 0..self.tables.len() {
            let lj = self.tables.basis[q][j];
            let ij = self.tau * self.tables.integrated[q][j];
            for c in 0..n {
                let d = x[j * n + c];
                if self.algebraic[c] {
                    u[c] += lj * d;
                } else {
                    u[c] += ij * d;
                    du[c] += lj * d;
                }
            }
        }
        (u, du)
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let blocks = self.tables.len();
        let mut out = DVector::zeros(blocks * n);
        for (q, (g, w)) in self.tables.quad.iter().enumerate() {
            let t = self.t_start + g * self.tau;
            let (u, du) = self.state_at(x, q);
            let local = self.problem.apply_structure(&u, &du) + self.problem.energy_gradient(&u)
                - self.problem.source(t, &u);
            for i in 0..blocks {
                let weight = self.tau * w * self.tables.basis[q][i];
                let mut block = out.rows_mut(i * n, n);
                block.axpy(weight, &local, 1.0);
            }
        }
        out
    }

    /// Exact Jacobian from problem-supplied derivative blocks.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let derivs = self
            .problem
            .derivatives()
            .expect("exact Jacobian requested without derivative blocks");
        let n = self.dim();
        let blocks = self.tables.len();
        let mut jac = DMatrix::zeros(blocks * n, blocks * n);
        for (q, (g, w)) in self.tables.quad.iter().enumerate() {
            let t = self.t_start + g * self.tau;
            let (u, du) = self.state_at(x, q);
            let c_mat = self.problem.structure_matrix(&u);
            let mut g_mat = (derivs.hessian)(&u);
            if let Some(sd) = &derivs.structure_derivative {
                g_mat += sd(&u, &du);
            }
            if let Some(fj) = &derivs.source_jacobian {
                g_mat -= fj(t, &u);
            }
            for j in 0..blocks {
                let lj = self.tables.basis[q][j];
                let ij = self.tau * self.tables.integrated[q][j];
                // d(local)/d(x_j)
                let mut local = DMatrix::zeros(n, n);
                for c in 0..n {
                    let col = if self.algebraic[c] {
                        g_mat.column(c) * lj
                    } else {
                        c_mat.column(c) * lj + g_mat.column(c) * ij
                    };
                    local.set_column(c, &col);
                }
                for i in 0..blocks {
                    let weight = self.tau * w * self.tables.basis[q][i];
                    let mut view = jac.view_mut((i * n, j * n), (n, n));
                    view += &local * weight;
                }
            }
        }
        jac
    }
}

/// Petrov-Galerkin residual of `step` under quadrature `quad`, stacked
/// block-wise over the test functions.
pub fn step_residual(
    problem: &EvolutionProblem,
    step: &StepSolution,
    quad: &QuadratureRule,
) -> Result<DVector<f64>> {
    check_len("step state", problem.dim(), step.start.len())?;
    if quad.order() < step.nodes.len() {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {} is below the {} test functions of the step",
            quad.order(),
            step.nodes.len()
        )));
    }
    let system = StepSystem {
        problem,
        t_start: step.t_start,
        tau: step.tau,
        start: &step.start,
        tables: StepTables::new(&step.nodes, quad),
        algebraic: step.algebraic.clone(),
    };
    Ok(system.residual(&stack(&step.coefficients)))
}

fn stack(coefficients: &[State]) -> DVector<f64> {
    let n = coefficients.first().map_or(0, |c| c.len());
    let mut x = DVector::zeros(coefficients.len() * n);
    for (j, c) in coefficients.iter().enumerate() {
        x.rows_mut(j * n, n).copy_from(c);
    }
    x
}

fn check_scheme(
    problem: &EvolutionProblem,
    u: &State,
    k: usize,
    quad: &QuadratureRule,
) -> Result<()> {
    check_len("initial state", problem.dim(), u.len())?;
    if k + 1 > crate::quadrature::MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "degree k = {k} is too large"
        )));
    }
    if quad.order() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {} must be at least k + 1 = {}",
            quad.order(),
            k + 1
        )));
    }
    Ok(())
}

/// One Petrov-Galerkin step of degree `k` from `u_start` at `t_start`.
pub fn step(
    problem: &EvolutionProblem,
    t_start: f64,
    tau: f64,
    u_start: &State,
    k: usize,
    quad: &QuadratureRule,
    cfg: &NewtonConfig,
) -> Result<StepSolution> {
    step_from(problem, t_start, tau, u_start, k, quad, cfg, None)
}

#[allow(clippy::too_many_arguments)]
fn step_from(
    problem: &EvolutionProblem,
    t_start: f64,
    tau: f64,
    u_start: &State,
    k: usize,
    quad: &QuadratureRule,
    cfg: &NewtonConfig,
    previous: Option<&StepSolution>,
) -> Result<StepSolution> {
    check_scheme(problem, u_start, k, quad)?;
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let nodes = gauss_legendre(k + 1)?.nodes().to_vec();
    let algebraic = problem.algebraic_flags();
    let system = StepSystem {
        problem,
        t_start,
        tau,
        start: u_start,
        tables: StepTables::new(&nodes, quad),
        algebraic: algebraic.clone(),
    };

    let guess = initial_guess(u_start, &nodes, &algebraic, tau, cfg.predictor, previous);
    let residual = |x: &DVector<f64>| system.residual(x);
    let solution = if problem.derivatives().is_some() {
        newton_solve_with(
            residual,
            Some(|x: &DVector<f64>| system.jacobian(x)),
            guess,
            cfg,
        )
    } else {
        newton_solve_with(
            residual,
            None::<fn(&DVector<f64>) -> DMatrix<f64>>,
            guess,
            cfg,
        )
    }?;

    let coefficients = (0..nodes.len())
        .map(|j| system.coefficient(&solution.x, j))
        .collect();
    Ok(StepSolution {
        t_start,
        tau,
        start: u_start.clone(),
        nodes,
        coefficients,
        algebraic,
        iterations: solution.iterations,
    })
}

fn initial_guess(
    u_start: &State,
    nodes: &[f64],
    algebraic: &[bool],
    tau: f64,
    predictor: Predictor,
    previous: Option<&StepSolution>,
) -> DVector<f64> {
    let n = u_start.len();
    let mut x = DVector::zeros(nodes.len() * n);
    match (predictor, previous) {
        (Predictor::Extrapolate, Some(prev)) => {
            for (j, &c) in nodes.iter().enumerate() {
                let s = 1.0 + c * tau / prev.tau;
                let du = prev.derivative_at(s);
                let u = prev.value_at(s);
                for i in 0..n {
                    x[j * n + i] = if algebraic[i] { u[i] } else { du[i] };
                }
            }
        }
        _ => {
            for j in 0..nodes.len() {
                for i in 0..n {
                    if algebraic[i] {
                        x[j * n + i] = u_start[i];
                    }
                }
            }
        }
    }
    x
}

/// The `k = 0` scheme written directly for the end value `u_n`:
///
/// ```text
/// Cbar (u_n - u_{n-1}) / tau = -Hbar' + fbar
/// ```
///
/// with each bar an average over `u(s) = u_{n-1} + s (u_n - u_{n-1})`
/// computed by `quad`. Algebraic coordinates are held at their end value.
pub fn discrete_gradient_step(
    problem: &EvolutionProblem,
    t_start: f64,
    tau: f64,
    u_start: &State,
    quad: &QuadratureRule,
    cfg: &NewtonConfig,
) -> Result<State> {
    check_scheme(problem, u_start, 0, quad)?;
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let algebraic = problem.algebraic_flags();
    let n = problem.dim();

    let path = |x: &DVector<f64>, s: f64| -> (State, State) {
        let mut u = u_start.clone();
        let mut v = State::zeros(n);
        for c in 0..n {
            if algebraic[c] {
                u[c] = x[c];
            } else {
                let delta = x[c] - u_start[c];
                u[c] += s * delta;
                v[c] = delta / tau;
            }
        }
        (u, v)
    };

    let residual = |x: &DVector<f64>| {
        let mut out = DVector::zeros(n);
        for (g, w) in quad.iter() {
            let (u, v) = path(x, g);
            let t = t_start + g * tau;
            let local = problem.apply_structure(&u, &v) + problem.energy_gradient(&u)
                - problem.source(t, &u);
            out.axpy(w, &local, 1.0);
        }
        out
    };

    let jacobian = |x: &DVector<f64>| {
        let derivs = problem.derivatives().expect("checked by caller");
        let mut jac = DMatrix::zeros(n, n);
        for (g, w) in quad.iter() {
            let (u, v) = path(x, g);
            let t = t_start + g * tau;
            let c_mat = problem.structure_matrix(&u);
            let mut g_mat = (derivs.hessian)(&u);
            if let Some(sd) = &derivs.structure_derivative {
                g_mat += sd(&u, &v);
            }
            if let Some(fj) = &derivs.source_jacobian {
                g_mat -= fj(t, &u);
            }
            for c in 0..n {
                let col = if algebraic[c] {
                    g_mat.column(c).into_owned()
                } else {
                    c_mat.column(c) / tau + g_mat.column(c) * g
                };
                let mut target = jac.column_mut(c);
                target.axpy(w, &col, 1.0);
            }
        }
        jac
    };

    let solution = if problem.derivatives().is_some() {
        newton_solve_with(residual, Some(jacobian), u_start.clone(), cfg)
    } else {
        newton_solve_with(
            residual,
            None::<fn(&DVector<f64>) -> DMatrix<f64>>,
            u_start.clone(),
            cfg,
        )
    }?;
    Ok(solution.x)
}

/// A computed piecewise-polynomial solution over a [`TimeGrid`].
#[derive(Clone)]
pub struct Trajectory {
    problem: EvolutionProblem,
    grid: TimeGrid,
    degree: usize,
    quadrature: QuadratureRule,
    newton: NewtonConfig,
    steps: Vec<StepSolution>,
    nodal: Vec<State>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("dim", &self.problem.dim())
            .field("degree", &self.degree)
            .field("quadrature_order", &self.quadrature.order())
            .field("steps", &self.steps.len())
            .field("grid_steps", &self.grid.steps())
            .finish()
    }
}

impl Trajectory {
    /// Assemble a trajectory from already computed steps. Step `n` must
    /// start where step `n - 1` ends.
    pub fn from_parts(
        problem: EvolutionProblem,
        grid: TimeGrid,
        quadrature: QuadratureRule,
        newton: NewtonConfig,
        steps: Vec<StepSolution>,
    ) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("trajectory needs at least one step".into()))?;
        let degree = first.degree();
        let mut traj = Self {
            problem,
            grid,
            degree,
            quadrature,
            newton,
            steps: Vec::with_capacity(steps.len()),
            nodal: vec![first.start.clone()],
        };
        for s in steps {
            traj.push(s);
        }
        Ok(traj)
    }

    fn push(&mut self, step: StepSolution) {
        let n = self.steps.len();
        let right = step.value_at(0.0);
        for (c, &alg) in step.algebraic.iter().enumerate() {
            if alg {
                self.nodal[n][c] = right[c];
            }
        }
        self.nodal.push(step.end_value());
        self.steps.push(step);
    }

    pub fn problem(&self) -> &EvolutionProblem {
        &self.problem
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Test-space degree `k`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn newton_config(&self) -> &NewtonConfig {
        &self.newton
    }

    pub fn steps(&self) -> &[StepSolution] {
        &self.steps
    }

    /// `u_0 .. u_n` at the completed grid nodes. At interior nodes the
    /// algebraic coordinates hold the right limit.
    pub fn nodal_states(&self) -> &[State] {
        &self.nodal
    }

    /// Grid times of the completed nodes.
    pub fn times(&self) -> &[f64] {
        &self.grid.nodes()[..self.nodal.len()]
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.grid.steps()
    }

    pub fn final_state(&self) -> &State {
        self.nodal.last().unwrap()
    }

    /// Nodal energies `H(u_n)`.
    pub fn energies(&self) -> Vec<f64> {
        self.nodal.iter().map(|u| self.problem.energy(u)).collect()
    }
}

/// Failure inside [`integrate`], carrying every step completed before it.
#[derive(Debug)]
pub struct IntegrationFailure {
    pub error: Error,
    pub partial: Option<Trajectory>,
}

impl fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for IntegrationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for IntegrationFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

/// Integrates over `grid` from `u0`. Algebraic coordinates of `u0` are not
/// used; they are determined by the first step.
pub fn integrate(
    problem: &EvolutionProblem,
    grid: &TimeGrid,
    u0: &State,
    k: usize,
    quad: &QuadratureRule,
    cfg: &NewtonConfig,
) -> Result<Trajectory, Box<IntegrationFailure>> {
    check_scheme(problem, u0, k, quad).map_err(|e| Box::new(e.into()))?;
    cfg.validate().map_err(|e| Box::new(e.into()))?;

    let mut start = u0.clone();
    for &i in problem.algebraic_mask() {
        start[i] = 0.0;
    }
    let mut traj = Trajectory {
        problem: problem.clone(),
        grid: grid.clone(),
        degree: k,
        quadrature: quad.clone(),
        newton: *cfg,
        steps: Vec::with_capacity(grid.steps()),
        nodal: vec![start],
    };
    for n in 1..=grid.steps() {
        let t_start = grid.nodes()[n - 1];
        let u_start = traj.nodal[n - 1].clone();
        let result = step_from(
            problem,
            t_start,
            grid.step_size(n),
            &u_start,
            k,
            quad,
            cfg,
            traj.steps.last(),
        );
        match result {
            Ok(s) => traj.push(s),
            Err(err) => {
                let error = match err {
                    Error::Newton(source) => Error::StepFailed { step: n, source },
                    other => other,
                };
                return Err(Box::new(IntegrationFailure {
                    error,
                    partial: Some(traj),
                }));
            }
        }
    }
    Ok(traj)
}

/// Evaluates `u_N(t)`. Grid nodes return the stored nodal state.
pub fn evaluate(trajectory: &Trajectory, t: f64) -> Result<State> {
    let times = trajectory.times();
    let (first, last) = (times[0], *times.last().unwrap());
    if !(t >= first && t <= last) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside the computed range [{first}, {last}]"
        )));
    }
    if let Ok(n) = times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        return Ok(trajectory.nodal[n].clone());
    }
    let n = times.partition_point(|&x| x < t);
    let step = &trajectory.steps[n - 1];
    Ok(step.value_at((t - step.t_start) / step.tau))
}
