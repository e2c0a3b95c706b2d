//! The `run`, `convergence` and `reduce` subcommands.
//!
//! Each command first validates everything it needs, then computes all
//! artifacts in memory, and only then writes files. A configuration error
//! therefore never leaves files behind, while a solver failure still flushes
//! the completed part of the run followed by a failure marker row.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use super::output::{constraint_csv, energy_csv, num, trajectory_csv, Csv, Summary};
use crate::audit::{constraint_history, convergence_study, energy_identity_residual, Reference};
use crate::error::Error;
use crate::galerkin::{
    counterexample_problem, reduce, reduce_nonstructured, search_counterexample, Basis,
};
use crate::newton::NewtonConfig;
use crate::problem::{EvolutionProblem, MatrixFn, State};
use crate::problems::ProblemBundle;
use crate::quadrature::{gauss_legendre, QuadratureRule};
use crate::timestepping::{integrate, TimeGrid};

/// Seeds scanned for the counterexample written by `reduce`.
pub const COUNTEREXAMPLE_SEEDS: std::ops::Range<u64> = 0..1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

/// Files produced by a command, relative to the output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, String)>,
    /// First solver failure; files are still written.
    pub failure: Option<String>,
}

impl Artifacts {
    fn add(&mut self, path: impl Into<PathBuf>, text: String) {
        self.files.push((path.into(), text));
    }

    fn fail(&mut self, message: String) {
        self.failure.get_or_insert(message);
    }

    /// Writes every file below `out` and reports a recorded failure.
    pub fn write(self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let mut written = Vec::with_capacity(self.files.len());
        for (rel, text) in self.files {
            let path = out.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, text)?;
            written.push(path);
        }
        match self.failure {
            Some(msg) => Err(CliError::Solver(msg)),
            None => Ok(written),
        }
    }
}

fn config_error(key: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Config(ConfigError::Invalid {
        key: key.into(),
        message: err.to_string(),
    })
}

/// Scheme settings shared by every integration of one command.
struct Scheme {
    k: usize,
    quad: QuadratureRule,
    audit_quad: QuadratureRule,
    newton: NewtonConfig,
}

impl Scheme {
    fn new(cfg: &RunConfig, bundle: &ProblemBundle) -> Result<Self, CliError> {
        let m = cfg.scheme_order(bundle);
        let audit_m = cfg.audit_order(m);
        Ok(Self {
            k: cfg.k,
            quad: gauss_legendre(m).map_err(|e| config_error("m", e))?,
            audit_quad: gauss_legendre(audit_m).map_err(|e| config_error("audit_m", e))?,
            newton: cfg.newton,
        })
    }

    fn describe(&self, summary: &mut Summary) {
        summary.add("k", self.k);
        summary.add("m", self.quad.order());
        summary.add("audit_m", self.audit_quad.order());
        summary.add("newton_tol", num(self.newton.tolerance));
        summary.add("newton_max_iter", self.newton.max_iterations);
    }
}

fn prepare(cfg: &RunConfig) -> Result<(ProblemBundle, State, Scheme), CliError> {
    let bundle = cfg
        .problem
        .build(cfg.seed)
        .map_err(|e| config_error("problem", e))?;
    let u0 = cfg.initial_state(&bundle)?;
    let scheme = Scheme::new(cfg, &bundle)?;
    Ok((bundle, u0, scheme))
}

/// Integrates, audits and renders one run into `dir`. Lifts states through
/// `basis` in the trajectory file when given.
fn simulate(
    problem: &EvolutionProblem,
    u0: &State,
    grid: &TimeGrid,
    scheme: &Scheme,
    basis: Option<&Basis>,
    dir: &Path,
    artifacts: &mut Artifacts,
) -> Result<Summary, CliError> {
    let solver = |e: Error| CliError::Solver(e.to_string());
    let (trajectory, failure) =
        match integrate(problem, grid, u0, scheme.k, &scheme.quad, &scheme.newton) {
            Ok(t) => (t, None),
            Err(f) => {
                let f = *f;
                match f.partial {
                    Some(partial) => (partial, Some(f.error)),
                    None => return Err(solver(f.error)),
                }
            }
        };
    let failed_step = failure.as_ref().map(|e| match e {
        Error::StepFailed { step, .. } => *step,
        _ => trajectory.steps().len() + 1,
    });
    let report =
        energy_identity_residual(problem, &trajectory, &scheme.audit_quad).map_err(solver)?;

    let mut files: Vec<(&str, Csv)> = vec![
        ("trajectory.csv", trajectory_csv(&trajectory, basis)),
        ("energy.csv", energy_csv(&report, grid.start())),
    ];
    let mut summary = Summary::default();
    if problem.constraint().is_some() {
        let history = constraint_history(&trajectory).map_err(solver)?;
        let first = &history[0];
        let drift = history
            .iter()
            .map(|g| (g - first).amax())
            .fold(0.0_f64, f64::max);
        files.push((
            "constraint.csv",
            constraint_csv(trajectory.times(), &history),
        ));
        summary.add("constraint_drift", num(drift));
    }
    for (name, mut csv) in files {
        if let Some(step) = failed_step {
            csv.failure(step);
        }
        artifacts.add(dir.join(name), csv.into_string());
    }

    let energies = report.energies();
    let energy_drift = energies
        .iter()
        .map(|h| (h - energies[0]).abs())
        .fold(0.0_f64, f64::max);
    summary.add("status", if failure.is_some() { "failed" } else { "ok" });
    summary.add("steps_completed", trajectory.steps().len());
    summary.add("exact_integration", report.exact_integration);
    summary.add("identity_bound", report.bound.map(num).unwrap_or_default());
    summary.add("max_abs_identity_residual", num(report.max_abs_residual));
    summary.add("energy_drift", num(energy_drift));
    summary.add(
        "monotonicity_violations",
        report
            .monotonicity_violations
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" "),
    );
    summary.add(
        "newton_iterations",
        trajectory
            .steps()
            .iter()
            .map(|s| s.newton_iterations())
            .sum::<usize>(),
    );
    if let Some(err) = failure {
        let message = format!("{}: {err}", dir.display());
        summary.add("failure", &message);
        artifacts.fail(message);
    }
    Ok(summary)
}

fn header(cfg: &RunConfig, bundle: &ProblemBundle, grid: Option<&TimeGrid>) -> Summary {
    let mut s = Summary::default();
    s.add("problem", bundle.name);
    s.add("dim", bundle.problem.dim());
    s.add("seed", cfg.seed);
    s.add("T", num(cfg.t_end));
    if let Some(grid) = grid {
        s.add("N", grid.steps());
        s.add(
            "grid",
            if cfg.first_step.is_some() {
                "geometric"
            } else {
                "uniform"
            },
        );
    }
    s
}

fn merge(into: &mut Summary, prefix: &str, from: Summary) {
    into.extend_prefixed(prefix, from);
}

/// `run`: one integration with energy and constraint audits.
pub fn run(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let (bundle, u0, scheme) = prepare(cfg)?;
    let grid = cfg.grid()?;
    let mut artifacts = Artifacts::default();
    let mut summary = header(cfg, &bundle, Some(&grid));
    scheme.describe(&mut summary);
    let run = simulate(
        &bundle.problem,
        &u0,
        &grid,
        &scheme,
        None,
        Path::new(""),
        &mut artifacts,
    )?;
    merge(&mut summary, "", run);
    artifacts.add("summary.csv", summary.into_string());
    Ok(artifacts)
}

/// `convergence`: final-time errors on the uniform grids of `N_list`.
pub fn convergence(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    if cfg.steps_list.is_empty() {
        return Err(ConfigError::Missing("N_list").into());
    }
    if cfg.first_step.is_some() {
        return Err(config_error(
            "first_step",
            "convergence studies use uniform grids",
        ));
    }
    let (bundle, u0, scheme) = prepare(cfg)?;
    let reference = match bundle.exact_solution(cfg.t_end, &u0) {
        Some(exact) => Reference::Given(exact),
        None => Reference::SelfRun,
    };
    let mut artifacts = Artifacts::default();
    let mut summary = header(cfg, &bundle, None);
    scheme.describe(&mut summary);
    summary.add(
        "N_list",
        cfg.steps_list
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" "),
    );

    let mut csv = Csv::new(&["N", "tau", "error", "observed_order"]);
    match convergence_study(
        &bundle.problem,
        &u0,
        &reference,
        cfg.t_end,
        scheme.k,
        &cfg.steps_list,
        &scheme.quad,
        &scheme.newton,
    ) {
        Ok(table) => {
            let note = match reference {
                Reference::Given(_) => "closed form".to_string(),
                Reference::SelfRun => table.reference_note.clone(),
            };
            summary.add("reference", note);
            summary.add("status", "ok");
            for row in &table.rows {
                csv.row([
                    row.steps.to_string(),
                    num(row.tau),
                    num(row.error),
                    row.order.map(num).unwrap_or_default(),
                ]);
            }
        }
        Err(e) => {
            csv.failure(0);
            summary.add("status", "failed");
            summary.add("failure", &e);
            artifacts.fail(e.to_string());
        }
    }
    artifacts.add("convergence.csv", csv.into_string());
    artifacts.add("summary.csv", summary.into_string());
    Ok(artifacts)
}

/// `-C^{-1}` for a constant invertible structure without source or
/// algebraic coordinates: the explicit form `u' = -C^{-1} H'(u)`.
fn explicit_operator(problem: &EvolutionProblem) -> Option<MatrixFn> {
    let flags = problem.flags();
    if !flags.constant || problem.has_source() || !problem.algebraic_mask().is_empty() {
        return None;
    }
    let inverse: DMatrix<f64> = problem
        .structure_matrix(&State::zeros(problem.dim()))
        .try_inverse()?;
    let b = -inverse;
    Some(std::sync::Arc::new(move |_| b.clone()))
}

/// `reduce`: full, structure-preserving reduced and non-structured reduced
/// runs, plus the counterexample instance.
pub fn reduce_and_run(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let reduction = cfg.reduction.ok_or(ConfigError::Missing("reduce_r"))?;
    let (bundle, u0, scheme) = prepare(cfg)?;
    let grid = cfg.grid()?;
    let n = bundle.problem.dim();
    let basis_seed = reduction.seed.unwrap_or(cfg.seed);
    let basis = if reduction.identity {
        Basis::identity(n)
    } else {
        if reduction.rank > n {
            return Err(config_error(
                "reduce_r",
                format!("exceeds the problem dimension {n}"),
            ));
        }
        Basis::random(n, reduction.rank, basis_seed)
    }
    .map_err(|e| config_error("reduce_r", e))?;
    let reduced = reduce(&bundle.problem, &basis).map_err(|e| config_error("reduce_r", e))?;
    let y0 = basis.project(&u0).map_err(|e| config_error("u0", e))?;

    let mut artifacts = Artifacts::default();
    let mut summary = header(cfg, &bundle, Some(&grid));
    scheme.describe(&mut summary);
    summary.add("reduce_r", basis.rank());
    summary.add(
        "reduce_seed",
        if reduction.identity {
            "identity".to_string()
        } else {
            basis_seed.to_string()
        },
    );
    artifacts.add("basis.csv", basis.to_csv());

    let full = simulate(
        &bundle.problem,
        &u0,
        &grid,
        &scheme,
        None,
        Path::new("full"),
        &mut artifacts,
    )?;
    merge(&mut summary, "full_", full);
    let structured = simulate(
        &reduced,
        &y0,
        &grid,
        &scheme,
        Some(&basis),
        Path::new("reduced"),
        &mut artifacts,
    )?;
    merge(&mut summary, "reduced_", structured);

    match explicit_operator(&bundle.problem) {
        Some(operator) => {
            let system = reduce_nonstructured(operator, &bundle.problem, None, &basis)
                .and_then(|s| s.into_problem())
                .map_err(|e| CliError::Solver(e.to_string()))?;
            let run = simulate(
                &system,
                &y0,
                &grid,
                &scheme,
                Some(&basis),
                Path::new("nonstructured"),
                &mut artifacts,
            )?;
            merge(&mut summary, "nonstructured_", run);
        }
        None => summary.add(
            "nonstructured_status",
            "skipped: needs a constant invertible structure without source",
        ),
    }

    let instance = search_counterexample(COUNTEREXAMPLE_SEEDS.start, COUNTEREXAMPLE_SEEDS.end)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    artifacts.add("counterexample.csv", instance.to_csv());
    let audit = (|| -> crate::Result<f64> {
        let problem = counterexample_problem(&instance.mass_matrix())?;
        let reduced = reduce(&problem, &instance.basis()?)?;
        let traj = integrate(
            &reduced,
            &grid,
            &State::from_element(1, 1.0),
            scheme.k,
            &scheme.quad,
            &scheme.newton,
        )
        .map_err(|f| f.error)?;
        Ok(energy_identity_residual(&reduced, &traj, &scheme.quad)?.max_abs_residual)
    })();
    match audit {
        Ok(r) => summary.add(
            "counterexample_structured_max_abs_identity_residual",
            num(r),
        ),
        Err(e) => artifacts.fail(format!("counterexample audit: {e}")),
    }
    summary.add(
        "counterexample_relative_discrepancy",
        num(instance.relative_discrepancy),
    );
    artifacts.add("summary.csv", summary.into_string());
    Ok(artifacts)
}
