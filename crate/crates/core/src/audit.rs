//! Checks run on computed trajectories.
//!
//! The central check is the discrete energy balance on every interval,
//!
//! ```text
//! R_n = H(u_n) - H(u_{n-1}) - tau sum_q w_q [<f, u_N'> - <C u_N', u_N'>](t_q)
//! ```
//!
//! which vanishes up to Newton tolerance whenever the scheme quadrature
//! integrates `d/dt H(u_N)` exactly and the audit uses the same rule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::newton::NewtonConfig;
use crate::problem::{EvolutionProblem, State};
use crate::quadrature::{gauss_legendre, QuadratureRule};
use crate::timestepping::{integrate, TimeGrid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    /// Grid index `n` of the interval end.
    pub step: usize,
    pub time: f64,
    /// `H(u_n)`
    pub energy: f64,
    /// `tau sum_q w_q <f, u_N'>`
    pub work: f64,
    /// `tau sum_q w_q <C u_N', u_N'>`
    pub dissipation: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAuditReport {
    pub initial_energy: f64,
    pub records: Vec<EnergyRecord>,
    pub max_abs_residual: f64,
    pub scheme_order: usize,
    pub audit_order: usize,
    /// Whether every integrand of the identity is a polynomial integrated
    /// exactly by both rules.
    pub exact_integration: bool,
    /// `10 x` Newton tolerance when `exact_integration` holds.
    pub bound: Option<f64>,
    /// Grid indices where the energy of a dissipative, unforced problem grew.
    pub monotonicity_violations: Vec<usize>,
}

impl EnergyAuditReport {
    /// `true` when no bound applies or the bound holds.
    pub fn bound_satisfied(&self) -> bool {
        self.bound.is_none_or(|b| self.max_abs_residual <= b)
    }

    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial_energy)
            .chain(self.records.iter().map(|r| r.energy))
            .collect()
    }
}

/// Audit quadrature used when none is requested: `max(scheme, 8)` points.
pub fn default_audit_order(scheme_order: usize) -> usize {
    scheme_order.max(8)
}

/// Whether the energy identity of a degree-`k` trajectory is integrated
/// exactly by rules with `scheme_order` and `audit_order` points.
pub fn identity_is_exact(
    problem: &EvolutionProblem,
    k: usize,
    scheme_order: usize,
    audit_order: usize,
) -> bool {
    let degrees = problem.degrees();
    let Some(energy) = degrees.energy else {
        return false;
    };
    let trial = k as u32 + 1;
    let rate_degree = (energy * trial).saturating_sub(1);
    let exact_for = |m: usize, degree: u32| degree as usize <= 2 * m - 1;
    if scheme_order == audit_order {
        return exact_for(scheme_order, rate_degree);
    }
    let (Some(structure), Some(source)) = (degrees.structure, degrees.source) else {
        return false;
    };
    let k = k as u32;
    let m = scheme_order.min(audit_order);
    exact_for(m, rate_degree)
        && exact_for(m, structure * trial + 2 * k)
        && exact_for(m, source * trial + k)
}

/// Evaluates the discrete energy identity on every interval of `trajectory`,
/// using the energy, structure and source of `problem`.
pub fn energy_identity_residual(
    problem: &EvolutionProblem,
    trajectory: &Trajectory,
    audit_quad: &QuadratureRule,
) -> Result<EnergyAuditReport> {
    check_len(
        "audited trajectory",
        problem.dim(),
        trajectory.final_state().len(),
    )?;
    let mut records = Vec::with_capacity(trajectory.steps().len());
    for (i, step) in trajectory.steps().iter().enumerate() {
        let mut work = 0.0;
        let mut dissipation = 0.0;
        for (g, w) in audit_quad.iter() {
            let t = step.t_start() + g * step.tau();
            let u = step.value_at(g);
            let du = step.derivative_at(g);
            work += w * problem.source(t, &u).dot(&du);
            dissipation += w * problem.apply_structure(&u, &du).dot(&du);
        }
        work *= step.tau();
        dissipation *= step.tau();
        let before = problem.energy(step.start_value());
        let after = problem.energy(&step.end_value());
        records.push(EnergyRecord {
            step: i + 1,
            time: step.t_end(),
            energy: after,
            work,
            dissipation,
            residual: after - before - work + dissipation,
        });
    }
    let initial_energy = problem.energy(&trajectory.nodal_states()[0]);
    let max_abs_residual = records.iter().fold(0.0_f64, |m, r| m.max(r.residual.abs()));
    let scheme_order = trajectory.quadrature().order();
    let audit_order = audit_quad.order();
    let exact_integration =
        identity_is_exact(problem, trajectory.degree(), scheme_order, audit_order);
    let slack = 10.0 * trajectory.newton_config().tolerance;
    let monotonicity_violations = if problem.flags().spd && !problem.has_source() {
        let energies: Vec<f64> = std::iter::once(initial_energy)
            .chain(records.iter().map(|r| r.energy))
            .collect();
        energy_violations(&energies, slack)
    } else {
        Vec::new()
    };
    Ok(EnergyAuditReport {
        initial_energy,
        records,
        max_abs_residual,
        scheme_order,
        audit_order,
        exact_integration,
        bound: exact_integration.then_some(slack),
        monotonicity_violations,
    })
}

/// Indices `n` with `energies[n] > energies[n - 1] + slack`.
pub fn energy_violations(energies: &[f64], slack: f64) -> Vec<usize> {
    energies
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + slack)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Grid indices where `H` increased by more than `10 x` Newton tolerance.
/// Only meaningful for dissipative structure without source.
pub fn monotonicity_check(
    problem: &EvolutionProblem,
    trajectory: &Trajectory,
) -> Result<Vec<usize>> {
    if !problem.flags().spd || problem.has_source() {
        return Err(Error::Precondition(
            "monotonicity needs a positive definite structure and no source".into(),
        ));
    }
    check_len(
        "audited trajectory",
        problem.dim(),
        trajectory.final_state().len(),
    )?;
    let energies: Vec<f64> = trajectory
        .nodal_states()
        .iter()
        .map(|u| problem.energy(u))
        .collect();
    Ok(energy_violations(
        &energies,
        10.0 * trajectory.newton_config().tolerance,
    ))
}

/// `g(u_n)` at every completed grid node.
pub fn constraint_history(trajectory: &Trajectory) -> Result<Vec<State>> {
    let constraint = trajectory
        .problem()
        .constraint()
        .ok_or(Error::MissingConstraint)?;
    Ok(trajectory
        .nodal_states()
        .iter()
        .map(|u| constraint.eval(u))
        .collect())
}

/// `max_n max_i |g_i(u_n) - g_i(u_0)|`.
pub fn constraint_drift(trajectory: &Trajectory) -> Result<f64> {
    let history = constraint_history(trajectory)?;
    let first = &history[0];
    Ok(history
        .iter()
        .map(|g| (g - first).amax())
        .fold(0.0_f64, f64::max))
}

/// Where the reference solution at the final time comes from.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Known value, e.g. a closed form.
    Given(State),
    /// A `k = 3`, `m = 6` run on `8 x` the finest grid.
    SelfRun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub tau: f64,
    /// Euclidean error at the final time.
    pub error: f64,
    pub error_sup: f64,
    /// Observed order against the previous row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub reference: State,
    pub reference_note: String,
}

impl ConvergenceTable {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }
}

/// Final state of the high-order self reference run.
pub fn self_reference(
    problem: &EvolutionProblem,
    u0: &State,
    t_end: f64,
    steps: usize,
    cfg: &NewtonConfig,
) -> Result<State> {
    let grid = TimeGrid::uniform(t_end, steps)?;
    let quad = gauss_legendre(6)?;
    let traj = integrate(problem, &grid, u0, 3, &quad, cfg).map_err(|f| f.error)?;
    Ok(traj.final_state().clone())
}

/// Final-time errors and observed orders on uniform grids with `steps`
/// intervals each. Rows are computed in parallel and kept in input order.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    problem: &EvolutionProblem,
    u0: &State,
    reference: &Reference,
    t_end: f64,
    k: usize,
    steps: &[usize],
    quad: &QuadratureRule,
    cfg: &NewtonConfig,
) -> Result<ConvergenceTable> {
    if steps.is_empty() || steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "step counts must be non-empty and strictly increasing".into(),
        ));
    }
    let (reference, reference_note) = match reference {
        Reference::Given(r) => (r.clone(), "given reference".to_string()),
        Reference::SelfRun => {
            let n = 8 * steps.last().unwrap();
            (
                self_reference(problem, u0, t_end, n, cfg)?,
                format!("self reference k=3 m=6 N={n}"),
            )
        }
    };
    check_len("reference", problem.dim(), reference.len())?;
    let finals: Vec<Result<State>> = steps
        .par_iter()
        .map(|&n| {
            let grid = TimeGrid::uniform(t_end, n)?;
            let traj = integrate(problem, &grid, u0, k, quad, cfg).map_err(|f| f.error)?;
            Ok(traj.final_state().clone())
        })
        .collect();
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(steps.len());
    for (&n, fin) in steps.iter().zip(finals) {
        let diff = fin? - &reference;
        let error = diff.norm();
        let order = rows
            .last()
            .map(|prev| (prev.error / error).ln() / (n as f64 / prev.steps as f64).ln());
        rows.push(ConvergenceRow {
            steps: n,
            tau: t_end / n as f64,
            error,
            error_sup: diff.amax(),
            order,
        });
    }
    Ok(ConvergenceTable {
        rows,
        reference,
        reference_note,
    })
}

/// Matrix exponential by scaling and squaring with a `[6/6]` Pade approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const COEFFS: [f64; 7] = [
        1.0,
        1.0 / 2.0,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let identity = DMatrix::<f64>::identity(n, n);
    let mut power = identity.clone();
    let mut numer = identity.clone() * COEFFS[0];
    let mut denom = identity.clone() * COEFFS[0];
    for (j, c) in COEFFS.iter().enumerate().skip(1) {
        power = &power * &scaled;
        numer += &power * *c;
        denom += &power * (if j % 2 == 0 { *c } else { -*c });
    }
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is invertible");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `exp(-a t) u0`.
pub fn linear_flow(a: &DMatrix<f64>, t: f64, u0: &DVector<f64>) -> DVector<f64> {
    expm(&(a * -t)) * u0
}
