//! Abstract evolution problems `C(u) u' = -H'(u) + f(t, u)`.
//!
//! A problem is a bundle of closures over `nalgebra` vectors: the energy `H`
//! and its gradient, the action of the structure operator `C(u)`, and an
//! optional source. The pairing between `H'(u)` and a velocity is the
//! Euclidean dot product; builders fold any mass or weighting matrix into
//! `C`, `H'` and `f`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

pub type State = DVector<f64>;

pub type ScalarFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;
/// `(u, v) -> C(u) v`
pub type StructureFn = Arc<dyn Fn(&State, &State) -> State + Send + Sync>;
/// `(t, u) -> f(t, u)`
pub type SourceFn = Arc<dyn Fn(f64, &State) -> State + Send + Sync>;
/// `(u, v) -> d/du [C(u) v]`
pub type StructureDerivativeFn = Arc<dyn Fn(&State, &State) -> DMatrix<f64> + Send + Sync>;
/// `(t, u) -> d/du f(t, u)`
pub type SourceJacobianFn = Arc<dyn Fn(f64, &State) -> DMatrix<f64> + Send + Sync>;

/// Structural properties of `C(u)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StructureFlags {
    pub constant: bool,
    pub skew: bool,
    pub spd: bool,
}

/// Holonomic constraint `g(u) = 0` with Jacobian, used for drift diagnostics.
#[derive(Clone)]
pub struct Constraint {
    pub count: usize,
    pub value: VectorFn,
    pub jacobian: MatrixFn,
}

impl Constraint {
    pub fn eval(&self, u: &State) -> State {
        (self.value)(u)
    }
}

/// Exact derivative blocks for Newton Jacobians. `None` entries are
/// identically zero.
#[derive(Clone)]
pub struct ExactDerivatives {
    pub hessian: MatrixFn,
    pub structure_derivative: Option<StructureDerivativeFn>,
    pub source_jacobian: Option<SourceJacobianFn>,
}

/// Total polynomial degrees of `H`, `C` and `f` in the state. `None` means
/// not a polynomial (or time dependent, for the source).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolynomialDegrees {
    pub energy: Option<u32>,
    pub structure: Option<u32>,
    pub source: Option<u32>,
}

#[derive(Clone)]
pub struct EvolutionProblem {
    dim: usize,
    energy: ScalarFn,
    energy_gradient: VectorFn,
    structure: StructureFn,
    structure_matrix: Option<MatrixFn>,
    source: Option<SourceFn>,
    flags: StructureFlags,
    algebraic: Vec<usize>,
    constraint: Option<Constraint>,
    derivatives: Option<ExactDerivatives>,
    degrees: PolynomialDegrees,
}

impl fmt::Debug for EvolutionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionProblem")
            .field("dim", &self.dim)
            .field("flags", &self.flags)
            .field("algebraic", &self.algebraic)
            .field("has_source", &self.source.is_some())
            .field("has_constraint", &self.constraint.is_some())
            .field("has_exact_derivatives", &self.derivatives.is_some())
            .field("degrees", &self.degrees)
            .finish()
    }
}

impl EvolutionProblem {
    pub fn builder(dim: usize) -> ProblemBuilder {
        ProblemBuilder::new(dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flags(&self) -> StructureFlags {
        self.flags
    }

    /// Coordinates whose column of `C(u)` vanishes identically.
    pub fn algebraic_mask(&self) -> &[usize] {
        &self.algebraic
    }

    /// Per-coordinate flag, `true` for algebraic coordinates.
    pub fn algebraic_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.dim];
        for &i in &self.algebraic {
            flags[i] = true;
        }
        flags
    }

    pub fn constraint(&self) -> Option<&Constraint> {
        self.constraint.as_ref()
    }

    pub fn derivatives(&self) -> Option<&ExactDerivatives> {
        self.derivatives.as_ref()
    }

    pub fn degrees(&self) -> PolynomialDegrees {
        self.degrees
    }

    pub fn has_source(&self) -> bool {
        self.source.is_some()
    }

    pub fn energy(&self, u: &State) -> f64 {
        (self.energy)(u)
    }

    pub fn energy_gradient(&self, u: &State) -> State {
        (self.energy_gradient)(u)
    }

    pub fn apply_structure(&self, u: &State, v: &State) -> State {
        (self.structure)(u, v)
    }

    /// Dense `C(u)`, assembled column by column when no matrix form was supplied.
    pub fn structure_matrix(&self, u: &State) -> DMatrix<f64> {
        if let Some(m) = &self.structure_matrix {
            return m(u);
        }
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        let mut e = State::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.apply_structure(u, &e));
            e[j] = 0.0;
        }
        out
    }

    pub fn source(&self, t: f64, u: &State) -> State {
        match &self.source {
            Some(f) => f(t, u),
            None => State::zeros(self.dim),
        }
    }

    /// `C(u) udot + H'(u) - f(t, u)`; zero exactly on solutions.
    pub fn residual(&self, t: f64, u: &State, udot: &State) -> Result<State> {
        check_len("residual state", self.dim, u.len())?;
        check_len("residual velocity", self.dim, udot.len())?;
        Ok(self.apply_structure(u, udot) + self.energy_gradient(u) - self.source(t, u))
    }

    /// Pointwise energy rate `<f, udot> - <C(u) udot, udot>`.
    pub fn energy_rate(&self, t: f64, u: &State, udot: &State) -> Result<f64> {
        check_len("energy_rate state", self.dim, u.len())?;
        check_len("energy_rate velocity", self.dim, udot.len())?;
        let work = self.source(t, u).dot(udot);
        let dissipation = self.apply_structure(u, udot).dot(udot);
        Ok(work - dissipation)
    }

    /// Largest scaled deviation between central differences of `H` and the
    /// supplied gradient.
    pub fn check_gradient_consistency(&self, u: &State, h: f64) -> f64 {
        let grad = self.energy_gradient(u);
        let mut probe = u.clone();
        let mut worst = 0.0_f64;
        for i in 0..self.dim {
            let base = probe[i];
            probe[i] = base + h;
            let plus = self.energy(&probe);
            probe[i] = base - h;
            let minus = self.energy(&probe);
            probe[i] = base;
            let fd = (plus - minus) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
            worst = worst.max(err);
        }
        worst
    }

    /// Copy of this problem with a different gradient. Exact derivative
    /// blocks are dropped since they no longer match.
    pub fn with_energy_gradient(&self, gradient: VectorFn) -> Self {
        let mut out = self.clone();
        out.energy_gradient = gradient;
        out.derivatives = None;
        out
    }

    /// Copy of this problem without exact derivative blocks, forcing
    /// finite-difference Jacobians.
    pub fn without_derivatives(&self) -> Self {
        let mut out = self.clone();
        out.derivatives = None;
        out
    }
}

pub struct ProblemBuilder {
    dim: usize,
    energy: Option<(ScalarFn, VectorFn)>,
    structure: Option<StructureFn>,
    structure_matrix: Option<MatrixFn>,
    source: Option<SourceFn>,
    flags: StructureFlags,
    algebraic: Vec<usize>,
    constraint: Option<Constraint>,
    derivatives: Option<ExactDerivatives>,
    degrees: PolynomialDegrees,
}

impl ProblemBuilder {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            energy: None,
            structure: None,
            structure_matrix: None,
            source: None,
            flags: StructureFlags::default(),
            algebraic: Vec::new(),
            constraint: None,
            derivatives: None,
            degrees: PolynomialDegrees::default(),
        }
    }

    pub fn energy<E, G>(mut self, energy: E, gradient: G) -> Self
    where
        E: Fn(&State) -> f64 + Send + Sync + 'static,
        G: Fn(&State) -> State + Send + Sync + 'static,
    {
        self.energy = Some((Arc::new(energy), Arc::new(gradient)));
        self
    }

    pub fn energy_arc(mut self, energy: ScalarFn, gradient: VectorFn) -> Self {
        self.energy = Some((energy, gradient));
        self
    }

    pub fn structure<F>(mut self, apply: F) -> Self
    where
        F: Fn(&State, &State) -> State + Send + Sync + 'static,
    {
        self.structure = Some(Arc::new(apply));
        self
    }

    pub fn structure_arc(mut self, apply: StructureFn) -> Self {
        self.structure = Some(apply);
        self
    }

    pub fn structure_matrix_fn(mut self, matrix: MatrixFn) -> Self {
        self.structure_matrix = Some(matrix);
        self
    }

    /// State-independent `C`; sets the constant flag.
    pub fn constant_structure(mut self, matrix: DMatrix<f64>) -> Self {
        let matrix = Arc::new(matrix);
        let apply = Arc::clone(&matrix);
        self.structure = Some(Arc::new(move |_u: &State, v: &State| &*apply * v));
        self.structure_matrix = Some(Arc::new(move |_u: &State| (*matrix).clone()));
        self.flags.constant = true;
        self
    }

    pub fn source<F>(mut self, source: F) -> Self
    where
        F: Fn(f64, &State) -> State + Send + Sync + 'static,
    {
        self.source = Some(Arc::new(source));
        self
    }

    pub fn source_arc(mut self, source: SourceFn) -> Self {
        self.source = Some(source);
        self
    }

    pub fn flags(mut self, flags: StructureFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn skew(mut self) -> Self {
        self.flags.skew = true;
        self
    }

    pub fn spd(mut self) -> Self {
        self.flags.spd = true;
        self
    }

    pub fn algebraic(mut self, indices: Vec<usize>) -> Self {
        self.algebraic = indices;
        self
    }

    pub fn constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = Some(constraint);
        self
    }

    pub fn derivatives(mut self, derivatives: ExactDerivatives) -> Self {
        self.derivatives = Some(derivatives);
        self
    }

    pub fn degrees(mut self, degrees: PolynomialDegrees) -> Self {
        self.degrees = degrees;
        self
    }

    pub fn build(self) -> Result<EvolutionProblem> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument(
                "problem dimension must be positive".into(),
            ));
        }
        let (energy, energy_gradient) = self
            .energy
            .ok_or_else(|| Error::InvalidArgument("energy and gradient are required".into()))?;
        let structure = self
            .structure
            .ok_or_else(|| Error::InvalidArgument("structure operator is required".into()))?;
        let mut algebraic = self.algebraic;
        algebraic.sort_unstable();
        algebraic.dedup();
        if let Some(&bad) = algebraic.iter().find(|&&i| i >= self.dim) {
            return Err(Error::InvalidArgument(format!(
                "algebraic index {bad} out of range for dimension {}",
                self.dim
            )));
        }
        let mut degrees = self.degrees;
        if self.source.is_none() {
            degrees.source = Some(0);
        }
        Ok(EvolutionProblem {
            dim: self.dim,
            energy,
            energy_gradient,
            structure,
            structure_matrix: self.structure_matrix,
            source: self.source,
            flags: self.flags,
            algebraic,
            constraint: self.constraint,
            derivatives: self.derivatives,
            degrees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn oscillator() -> EvolutionProblem {
        EvolutionProblem::builder(2)
            .energy(|u| 0.5 * u.norm_squared(), |u| u.clone())
            .constant_structure(dmatrix![0.0, 1.0; -1.0, 0.0])
            .skew()
            .build()
            .unwrap()
    }

    fn scalar_flow() -> EvolutionProblem {
        EvolutionProblem::builder(1)
            .energy(|u| 0.5 * u[0] * u[0], |u| u.clone())
            .constant_structure(dmatrix![1.0])
            .spd()
            .build()
            .unwrap()
    }

    #[test]
    fn residual_vanishes_on_oscillator_solution() {
        let p = oscillator();
        let r = p
            .residual(
                0.0,
                &State::from_vec(vec![0.0, 1.0]),
                &State::from_vec(vec![1.0, 0.0]),
            )
            .unwrap();
        assert_eq!(r, State::zeros(2));
    }

    #[test]
    fn residual_at_rest_is_the_gradient() {
        let p = oscillator();
        let r = p
            .residual(0.0, &State::from_vec(vec![1.0, 0.0]), &State::zeros(2))
            .unwrap();
        assert_eq!(r, State::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn residual_scalar_gradient_flow() {
        let p = scalar_flow();
        let r = p
            .residual(
                0.0,
                &State::from_element(1, 2.0),
                &State::from_element(1, -2.0),
            )
            .unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn residual_rejects_wrong_length() {
        let p = oscillator();
        let err = p
            .residual(0.0, &State::zeros(3), &State::zeros(2))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                found: 3,
                ..
            }
        ));
        assert!(p
            .energy_rate(0.0, &State::zeros(2), &State::zeros(1))
            .is_err());
    }

    #[test]
    fn energy_rate_examples() {
        let skew = oscillator();
        let r = skew
            .energy_rate(
                0.3,
                &State::from_vec(vec![0.7, -2.0]),
                &State::from_vec(vec![1.5, 0.2]),
            )
            .unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-15);

        let identity = EvolutionProblem::builder(2)
            .energy(|u| 0.5 * u.norm_squared(), |u| u.clone())
            .constant_structure(DMatrix::identity(2, 2))
            .build()
            .unwrap();
        let r = identity
            .energy_rate(0.0, &State::zeros(2), &State::from_vec(vec![3.0, 0.0]))
            .unwrap();
        assert_eq!(r, -9.0);

        let forced = EvolutionProblem::builder(1)
            .energy(|u| 0.5 * u[0] * u[0], |u| u.clone())
            .constant_structure(dmatrix![1.0])
            .source(|_t, _u| State::from_element(1, 1.0))
            .build()
            .unwrap();
        let r = forced
            .energy_rate(0.0, &State::zeros(1), &State::from_element(1, 2.0))
            .unwrap();
        assert_eq!(r, -2.0);
    }

    #[test]
    fn gradient_consistency_quadratic_and_corrupted() {
        let p = oscillator();
        let u = State::from_vec(vec![0.3, -0.8]);
        assert!(p.check_gradient_consistency(&u, 1e-5) <= 1e-9);

        let corrupted = p.with_energy_gradient(Arc::new(|u: &State| u.add_scalar(1.0)));
        assert!(corrupted.check_gradient_consistency(&u, 1e-5) >= 0.5);
    }

    #[test]
    fn assembled_structure_matrix_matches_action() {
        let p = EvolutionProblem::builder(2)
            .energy(|u| 0.5 * u.norm_squared(), |u| u.clone())
            .structure(|u, v| State::from_vec(vec![u[0] * v[1], -u[0] * v[0]]))
            .build()
            .unwrap();
        let u = State::from_vec(vec![2.0, 5.0]);
        let m = p.structure_matrix(&u);
        assert_eq!(m, dmatrix![0.0, 2.0; -2.0, 0.0]);
    }

    #[test]
    fn builder_validates() {
        assert!(EvolutionProblem::builder(0)
            .energy(|_| 0.0, |u| u.clone())
            .structure(|_, v| v.clone())
            .build()
            .is_err());
        assert!(EvolutionProblem::builder(2)
            .energy(|_| 0.0, |u| u.clone())
            .build()
            .is_err());
        assert!(EvolutionProblem::builder(2)
            .energy(|_| 0.0, |u| u.clone())
            .structure(|_, v| v.clone())
            .algebraic(vec![2])
            .build()
            .is_err());
    }
}
