//! Structure-preserving discretization of evolution problems
//! `C(u) u' = -H'(u) + f(t, u)`.
//!
//! * [`problem`]: the abstract problem, residual and pointwise energy rate.
//! * [`timestepping`]: continuous Petrov-Galerkin time stepping with
//!   quadrature, including the discrete gradient special case.
//! * [`audit`]: discrete energy identity, dissipation, constraint drift and
//!   convergence checks on computed trajectories.
//! * [`galerkin`]: structure-preserving subspace reduction.
//! * [`problems`]: ready-made Hamiltonian, gradient, constrained and PDE
//!   test problems.
//! * [`cli`]: the experiment runner behind the `structint` binary.

pub mod audit;
pub mod cli;
pub mod error;
pub mod galerkin;
pub mod newton;
pub mod problem;
pub mod problems;
pub mod quadrature;
pub mod timestepping;

pub use error::{Error, Result};
pub use newton::{newton_solve, JacobianMode, NewtonConfig, NewtonError, Predictor};
pub use problem::{EvolutionProblem, State, StructureFlags};
pub use quadrature::{gauss_legendre, lagrange_eval, QuadratureRule};
pub use timestepping::{
    discrete_gradient_step, evaluate, integrate, step, step_residual, StepSolution, TimeGrid,
    Trajectory,
};
