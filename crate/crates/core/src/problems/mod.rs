//! Ready-made evolution problems with metadata.
//!
//! Each builder returns a [`ProblemBundle`]: the problem itself, a default
//! (possibly seeded) initial state, an optional closed-form solution and the
//! smallest Gauss-Legendre order that integrates the energy identity exactly.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, Result};
use crate::problem::{EvolutionProblem, State};

mod cahn_hilliard;
mod constrained;
mod gradient;
mod hamiltonian;
mod magnetoquasistatics;

pub use cahn_hilliard::{cahn_hilliard_1d, CahnHilliardParams};
pub use constrained::{constrained_pendulum, constrained_pendulum_forced, pendulum_multiplier};
pub use gradient::{double_well_gradient_flow, quadratic_gradient_flow};
pub use hamiltonian::{harmonic_oscillator, nonlinear_pendulum, random_skew_quadratic};
pub use magnetoquasistatics::{default_current, magnetoquasistatics_1d, MqsParams};

/// `(t, u0) -> u(t)`
pub type SolutionFn = Arc<dyn Fn(f64, &State) -> State + Send + Sync>;
/// `seed -> u0`
pub type InitialFn = Arc<dyn Fn(u64) -> State + Send + Sync>;
pub type InitialCheckFn = Arc<dyn Fn(&State) -> Result<()> + Send + Sync>;
pub type ReconstructFn = Arc<dyn Fn(&State) -> State + Send + Sync>;

#[derive(Clone)]
pub struct ProblemBundle {
    pub name: &'static str,
    pub problem: EvolutionProblem,
    pub note: String,
    initial: InitialFn,
    exact: Option<SolutionFn>,
    min_order: fn(usize) -> Option<usize>,
    min_order_formula: &'static str,
    initial_check: Option<InitialCheckFn>,
    reconstruct: Option<ReconstructFn>,
}

impl fmt::Debug for ProblemBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemBundle")
            .field("name", &self.name)
            .field("problem", &self.problem)
            .field("has_exact_solution", &self.exact.is_some())
            .field("min_order_formula", &self.min_order_formula)
            .finish()
    }
}

impl ProblemBundle {
    pub(crate) fn new(
        name: &'static str,
        problem: EvolutionProblem,
        note: impl Into<String>,
        initial: InitialFn,
        min_order: fn(usize) -> Option<usize>,
        min_order_formula: &'static str,
    ) -> Self {
        Self {
            name,
            problem,
            note: note.into(),
            initial,
            exact: None,
            min_order,
            min_order_formula,
            initial_check: None,
            reconstruct: None,
        }
    }

    pub(crate) fn with_exact(mut self, exact: SolutionFn) -> Self {
        self.exact = Some(exact);
        self
    }

    pub(crate) fn with_initial_check(mut self, check: InitialCheckFn) -> Self {
        self.initial_check = Some(check);
        self
    }

    pub(crate) fn with_reconstruction(mut self, map: ReconstructFn) -> Self {
        self.reconstruct = Some(map);
        self
    }

    /// Default initial state; seeded for problems with random initial data.
    pub fn initial_state(&self, seed: u64) -> State {
        (self.initial)(seed)
    }

    pub fn has_exact_solution(&self) -> bool {
        self.exact.is_some()
    }

    /// Closed-form `u(t)` starting from `u0`, when known.
    pub fn exact_solution(&self, t: f64, u0: &State) -> Option<State> {
        self.exact.as_ref().map(|f| f(t, u0))
    }

    /// Smallest number of Gauss points that integrates every term of the
    /// energy identity exactly for test degree `k`; `None` if some term is
    /// not polynomial.
    pub fn min_quadrature_order(&self, k: usize) -> Option<usize> {
        (self.min_order)(k)
    }

    pub fn min_quadrature_formula(&self) -> &'static str {
        self.min_order_formula
    }

    /// Rejects initial data violating problem-specific consistency conditions.
    pub fn check_initial(&self, u0: &State) -> Result<()> {
        check_len("initial state", self.problem.dim(), u0.len())?;
        match &self.initial_check {
            Some(check) => check(u0),
            None => Ok(()),
        }
    }

    /// Physical values of a state (identity unless the problem lives on a
    /// subspace).
    pub fn reconstruct(&self, u: &State) -> State {
        match &self.reconstruct {
            Some(map) => map(u),
            None => u.clone(),
        }
    }
}

pub(crate) fn fixed_initial(u0: State) -> InitialFn {
    Arc::new(move |_| u0.clone())
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::problem::State;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_state(n: usize, seed: u64, scale: f64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        State::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
    }

    /// Central-difference Jacobian of `f`.
    pub fn fd_jacobian(f: impl Fn(&State) -> State, u: &State, h: f64) -> nalgebra::DMatrix<f64> {
        let n = u.len();
        let m = f(u).len();
        let mut out = nalgebra::DMatrix::zeros(m, n);
        let mut probe = u.clone();
        for j in 0..n {
            probe[j] = u[j] + h;
            let plus = f(&probe);
            probe[j] = u[j] - h;
            let minus = f(&probe);
            probe[j] = u[j];
            out.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        out
    }

    /// Checks every exact derivative block against central differences.
    pub fn check_derivatives(p: &crate::problem::EvolutionProblem, u: &State, t: f64, tol: f64) {
        let d = p.derivatives().expect("exact derivatives");
        let hess = fd_jacobian(|x| p.energy_gradient(x), u, 1e-6);
        assert!(((d.hessian)(u) - hess).amax() < tol, "hessian");
        let v = random_state(p.dim(), 99, 1.0);
        let sd = fd_jacobian(|x| p.apply_structure(x, &v), u, 1e-6);
        match &d.structure_derivative {
            Some(f) => assert!((f(u, &v) - &sd).amax() < tol, "structure derivative"),
            None => assert!(sd.amax() < tol, "structure derivative should vanish"),
        }
        let sj = fd_jacobian(|x| p.source(t, x), u, 1e-6);
        match &d.source_jacobian {
            Some(f) => assert!((f(t, u) - &sj).amax() < tol, "source jacobian"),
            None => assert!(sj.amax() < tol, "source jacobian should vanish"),
        }
    }
}
