//! Galerkin reduction onto the span of an orthonormal basis.
//!
//! Restricting the variational form to `range(V)` keeps the structure: the
//! reduced problem `V^T C(Vy) V y' = -V^T H'(Vy) + V^T f(t, Vy)` has the
//! lifted energy `H(Vy)` and inherits skewness or definiteness of `C`. The
//! non-structured alternative projects the explicit form `u' = B(u) H'(u) + g(u)`
//! instead and generally loses the energy balance.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::problem::{
    Constraint, EvolutionProblem, ExactDerivatives, MatrixFn, ScalarFn, SourceFn, State,
    StructureFn, VectorFn,
};

/// Orthonormality tolerance `max |V^T V - I|`.
pub const ORTHONORMALITY_TOL: f64 = 1e-12;
/// Relative pivot below which Gram-Schmidt reports rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

/// An `n x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    matrix: DMatrix<f64>,
}

impl Basis {
    /// Wraps `matrix` after checking orthonormality of its columns.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, r) = matrix.shape();
        if r == 0 || r > n {
            return Err(Error::InvalidArgument(format!(
                "basis shape {n}x{r} needs 1 <= r <= n"
            )));
        }
        let defect = (matrix.transpose() * &matrix - DMatrix::<f64>::identity(r, r)).amax();
        if !(defect <= ORTHONORMALITY_TOL) {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    /// Orthonormalized Gaussian matrix from a seeded generator.
    pub fn random(n: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::InvalidArgument(format!(
                "basis shape {n}x{r} needs 1 <= r <= n"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<State> = (0..r)
            .map(|_| State::from_fn(n, |_, _| rng.sample(StandardNormal)))
            .collect();
        orthonormalize(&vectors)
    }

    /// Full dimension `n`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Reduced dimension `r`.
    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lift(&self, y: &State) -> Result<State> {
        check_len("reduced state", self.rank(), y.len())?;
        Ok(&self.matrix * y)
    }

    /// Reduced coordinates `V^T u` of the orthogonal projection of `u`.
    pub fn project(&self, u: &State) -> Result<State> {
        check_len("full state", self.dim(), u.len())?;
        Ok(self.matrix.tr_mul(u))
    }

    /// Basis `V W` for a basis `W` of the reduced space.
    pub fn compose(&self, inner: &Basis) -> Result<Basis> {
        check_len("inner basis", self.rank(), inner.dim())?;
        let product = &self.matrix * &inner.matrix;
        Basis::new(product)
    }

    /// CSV text: a row `n,r`, then one row per column of `V`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.dim(), self.rank());
        for col in self.matrix.column_iter() {
            let row: Vec<String> = col.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("basis csv: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("header must be `n,r`"))?;
        let [n, r] = dims[..] else {
            return Err(bad("header must be `n,r`"));
        };
        let mut data = Vec::with_capacity(n * r);
        for line in lines {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("unparsable entry"))?;
            if row.len() != n {
                return Err(bad("column length differs from n"));
            }
            data.extend(row);
        }
        if data.len() != n * r {
            return Err(bad("number of columns differs from r"));
        }
        Self::new(DMatrix::from_vec(n, r, data))
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
pub fn orthonormalize(vectors: &[State]) -> Result<Basis> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no vectors to orthonormalize".into()))?;
    let n = first.len();
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    let mut q = DMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        check_len("orthonormalize input", n, v.len())?;
        let mut w = v.clone();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let c = qi.dot(&w);
                w.axpy(-c, &qi, 1.0);
            }
        }
        let pivot = w.norm();
        if !(pivot >= RANK_TOL * scale) || pivot == 0.0 {
            return Err(Error::RankDeficient { column: j, pivot });
        }
        q.set_column(j, &(w / pivot));
    }
    Basis::new(q)
}

pub fn lift(basis: &Basis, y: &State) -> Result<State> {
    basis.lift(y)
}

/// Reduced coordinate `j` is algebraic when column `j` of `V` vanishes on
/// every differential coordinate.
fn reduced_algebraic(problem: &EvolutionProblem, basis: &Basis) -> Vec<usize> {
    let flags = problem.algebraic_flags();
    (0..basis.rank())
        .filter(|&j| {
            basis
                .matrix
                .column(j)
                .iter()
                .zip(&flags)
                .all(|(&v, &alg)| alg || v == 0.0)
        })
        .collect()
}

/// Galerkin projection of `problem` onto `range(V)`.
pub fn reduce(problem: &EvolutionProblem, basis: &Basis) -> Result<EvolutionProblem> {
    check_len("basis rows", problem.dim(), basis.dim())?;
    let v = Arc::new(basis.matrix.clone());
    let r = basis.rank();

    let energy: ScalarFn = {
        let (p, v) = (problem.clone(), Arc::clone(&v));
        Arc::new(move |y: &State| p.energy(&(&*v * y)))
    };
    let gradient: VectorFn = {
        let (p, v) = (problem.clone(), Arc::clone(&v));
        Arc::new(move |y: &State| v.tr_mul(&p.energy_gradient(&(&*v * y))))
    };
    let mut builder = EvolutionProblem::builder(r).energy_arc(energy, gradient);

    if problem.flags().constant {
        let u0 = State::zeros(problem.dim());
        let c = v.transpose() * problem.structure_matrix(&u0) * &*v;
        builder = builder.constant_structure(c);
    } else {
        let apply: StructureFn = {
            let (p, v) = (problem.clone(), Arc::clone(&v));
            Arc::new(move |y: &State, w: &State| {
                v.tr_mul(&p.apply_structure(&(&*v * y), &(&*v * w)))
            })
        };
        let matrix: MatrixFn = {
            let (p, v) = (problem.clone(), Arc::clone(&v));
            Arc::new(move |y: &State| v.transpose() * p.structure_matrix(&(&*v * y)) * &*v)
        };
        builder = builder.structure_arc(apply).structure_matrix_fn(matrix);
    }
    builder = builder.flags(problem.flags());

    if problem.has_source() {
        let source: SourceFn = {
            let (p, v) = (problem.clone(), Arc::clone(&v));
            Arc::new(move |t: f64, y: &State| v.tr_mul(&p.source(t, &(&*v * y))))
        };
        builder = builder.source_arc(source);
    }

    if let Some(d) = problem.derivatives() {
        let hessian: MatrixFn = {
            let (h, v) = (Arc::clone(&d.hessian), Arc::clone(&v));
            Arc::new(move |y: &State| v.transpose() * h(&(&*v * y)) * &*v)
        };
        let structure_derivative = d.structure_derivative.as_ref().map(|sd| {
            let (sd, v) = (Arc::clone(sd), Arc::clone(&v));
            Arc::new(move |y: &State, w: &State| v.transpose() * sd(&(&*v * y), &(&*v * w)) * &*v)
                as _
        });
        let source_jacobian = d.source_jacobian.as_ref().map(|sj| {
            let (sj, v) = (Arc::clone(sj), Arc::clone(&v));
            Arc::new(move |t: f64, y: &State| v.transpose() * sj(t, &(&*v * y)) * &*v) as _
        });
        builder = builder.derivatives(ExactDerivatives {
            hessian,
            structure_derivative,
            source_jacobian,
        });
    }

    if let Some(c) = problem.constraint() {
        let value: VectorFn = {
            let (g, v) = (Arc::clone(&c.value), Arc::clone(&v));
            Arc::new(move |y: &State| g(&(&*v * y)))
        };
        let jacobian: MatrixFn = {
            let (g, v) = (Arc::clone(&c.jacobian), Arc::clone(&v));
            Arc::new(move |y: &State| g(&(&*v * y)) * &*v)
        };
        builder = builder.constraint(Constraint {
            count: c.count,
            value,
            jacobian,
        });
    }

    builder
        .algebraic(reduced_algebraic(problem, basis))
        .degrees(problem.degrees())
        .build()
}

/// Velocity of `C(u) u' = -H'(u) + f(t, u)` by a dense solve.
pub fn structured_velocity(problem: &EvolutionProblem, t: f64, u: &State) -> Result<State> {
    check_len("state", problem.dim(), u.len())?;
    let rhs = problem.source(t, u) - problem.energy_gradient(u);
    problem
        .structure_matrix(u)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("structure matrix is singular".into()))
}

/// `d/dt H(u)` along the structured flow at `u`.
pub fn structured_energy_rate(problem: &EvolutionProblem, t: f64, u: &State) -> Result<f64> {
    let du = structured_velocity(problem, t, u)?;
    Ok(problem.energy_gradient(u).dot(&du))
}

/// `y' = V^T B(Vy) H'(Vy) + V^T g(Vy)` together with the lifted energy.
#[derive(Clone)]
pub struct FirstOrderSystem {
    basis: Basis,
    energy: ScalarFn,
    gradient: VectorFn,
    operator: MatrixFn,
    extra: Option<VectorFn>,
}

impl std::fmt::Debug for FirstOrderSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FirstOrderSystem")
            .field("dim", &self.basis.dim())
            .field("rank", &self.basis.rank())
            .field("has_extra_source", &self.extra.is_some())
            .finish()
    }
}

impl FirstOrderSystem {
    pub fn dim(&self) -> usize {
        self.basis.rank()
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn rhs(&self, y: &State) -> Result<State> {
        let u = self.basis.lift(y)?;
        let mut du = (self.operator)(&u) * (self.gradient)(&u);
        if let Some(g) = &self.extra {
            du += g(&u);
        }
        self.basis.project(&du)
    }

    /// `H(Vy)`
    pub fn lifted_energy(&self, y: &State) -> Result<f64> {
        Ok((self.energy)(&self.basis.lift(y)?))
    }

    /// `d/dt H(Vy) = <H'(Vy), V y'>` along this system.
    pub fn lifted_energy_rate(&self, y: &State) -> Result<f64> {
        let u = self.basis.lift(y)?;
        let vy_dot = self.basis.lift(&self.rhs(y)?)?;
        Ok((self.gradient)(&u).dot(&vy_dot))
    }

    /// The same flow as an evolution problem with `C = I`, `H(y) = H(Vy)`
    /// and `f = rhs + V^T H'(Vy)`, so trajectories carry the lifted energy.
    pub fn into_problem(self) -> Result<EvolutionProblem> {
        let r = self.dim();
        let v = Arc::new(self.basis.matrix.clone());
        let energy: ScalarFn = {
            let (e, v) = (Arc::clone(&self.energy), Arc::clone(&v));
            Arc::new(move |y: &State| e(&(&*v * y)))
        };
        let gradient: VectorFn = {
            let (g, v) = (Arc::clone(&self.gradient), Arc::clone(&v));
            Arc::new(move |y: &State| v.tr_mul(&g(&(&*v * y))))
        };
        let source: SourceFn = {
            let (sys, gradient) = (self.clone(), Arc::clone(&gradient));
            Arc::new(move |_t: f64, y: &State| {
                sys.rhs(y).expect("dimension checked by the integrator") + gradient(y)
            })
        };
        EvolutionProblem::builder(r)
            .energy_arc(energy, gradient)
            .constant_structure(DMatrix::identity(r, r))
            .spd()
            .source_arc(source)
            .build()
    }
}

/// Projection of the explicit form `u' = B(u) H'(u) + g(u)` onto `range(V)`.
pub fn reduce_nonstructured(
    operator: MatrixFn,
    problem: &EvolutionProblem,
    extra_source: Option<VectorFn>,
    basis: &Basis,
) -> Result<FirstOrderSystem> {
    check_len("basis rows", problem.dim(), basis.dim())?;
    let probe = State::zeros(problem.dim());
    let b = operator(&probe);
    if b.shape() != (problem.dim(), problem.dim()) {
        return Err(Error::DimensionMismatch {
            context: "operator B",
            expected: problem.dim(),
            found: b.nrows(),
        });
    }
    let energy: ScalarFn = {
        let p = problem.clone();
        Arc::new(move |u: &State| p.energy(u))
    };
    let gradient: VectorFn = {
        let p = problem.clone();
        Arc::new(move |u: &State| p.energy_gradient(u))
    };
    Ok(FirstOrderSystem {
        basis: basis.clone(),
        energy,
        gradient,
        operator,
        extra: extra_source,
    })
}

/// One instance of the reduction counterexample: `M u' = -u` in two
/// dimensions, `H = |u|^2 / 2`, reduced onto `span{v}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleInstance {
    pub seed: u64,
    /// Symmetric positive definite `M` as `[m11, m12, m22]`.
    pub mass: [f64; 3],
    pub direction: [f64; 2],
    /// Energy rate of the structured reduction at `y = 1`.
    pub structured_rate: f64,
    /// Lifted energy rate of the non-structured reduction at `y = 1`.
    pub nonstructured_rate: f64,
    /// `|nonstructured - structured| / |structured|`.
    pub relative_discrepancy: f64,
}

impl CounterexampleInstance {
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let [a, b, c] = self.mass;
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }

    pub fn basis(&self) -> Result<Basis> {
        Basis::new(DMatrix::from_column_slice(2, 1, &self.direction))
    }

    /// Evaluates both reductions for the given data.
    pub fn evaluate(seed: u64, mass: [f64; 3], direction: [f64; 2]) -> Result<Self> {
        let mut out = Self {
            seed,
            mass,
            direction,
            structured_rate: 0.0,
            nonstructured_rate: 0.0,
            relative_discrepancy: 0.0,
        };
        let m = out.mass_matrix();
        let basis = out.basis()?;
        let full = counterexample_problem(&m)?;
        let structured = reduce(&full, &basis)?;
        let y = State::from_element(1, 1.0);
        out.structured_rate = structured_energy_rate(&structured, 0.0, &y)?;
        let nonstructured = counterexample_nonstructured(&full, &m, &basis)?;
        out.nonstructured_rate = nonstructured.lifted_energy_rate(&y)?;
        out.relative_discrepancy =
            ((out.nonstructured_rate - out.structured_rate) / out.structured_rate).abs();
        Ok(out)
    }

    /// Random instance: `M = R diag(l) R^T` with log-uniform `l` in
    /// `[0.1, 10]`, `v` uniform on the unit circle.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let l1 = 10f64.powf(rng.random_range(-1.0..1.0));
        let l2 = 10f64.powf(rng.random_range(-1.0..1.0));
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        let mass = [
            c * c * l1 + s * s * l2,
            c * s * (l1 - l2),
            s * s * l1 + c * c * l2,
        ];
        Self::evaluate(seed, mass, [phi.cos(), phi.sin()])
    }

    /// `key,value` rows.
    pub fn to_csv(&self) -> String {
        let rows = [
            ("seed", self.seed.to_string()),
            ("m11", format!("{:?}", self.mass[0])),
            ("m12", format!("{:?}", self.mass[1])),
            ("m22", format!("{:?}", self.mass[2])),
            ("v1", format!("{:?}", self.direction[0])),
            ("v2", format!("{:?}", self.direction[1])),
            ("structured_rate", format!("{:?}", self.structured_rate)),
            ("nonstructured_rate", format!("{:?}", self.nonstructured_rate)),
            (
                "relative_discrepancy",
                format!("{:?}", self.relative_discrepancy),
            ),
        ];
        let mut out = String::from("key,value\n");
        for (k, v) in rows {
            writeln!(out, "{k},{v}").unwrap();
        }
        out
    }

    /// Reads the data columns and re-evaluates both rates.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("counterexample csv: `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("counterexample csv: missing `{k}`")))
        };
        let seed = map
            .get("seed")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidArgument("counterexample csv: missing `seed`".into()))?;
        Self::evaluate(
            seed,
            [get("m11")?, get("m12")?, get("m22")?],
            [get("v1")?, get("v2")?],
        )
    }
}

/// `M u' = -u`, `H = |u|^2 / 2`.
pub fn counterexample_problem(mass: &DMatrix<f64>) -> Result<EvolutionProblem> {
    let n = mass.nrows();
    let identity = DMatrix::<f64>::identity(n, n);
    EvolutionProblem::builder(n)
        .energy(|u| 0.5 * u.norm_squared(), |u| u.clone())
        .constant_structure(mass.clone())
        .spd()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(move |_| identity.clone()),
            structure_derivative: None,
            source_jacobian: None,
        })
        .degrees(crate::problem::PolynomialDegrees {
            energy: Some(2),
            structure: Some(0),
            source: Some(0),
        })
        .build()
}

/// Non-structured reduction of `u' = -M^{-1} u`.
pub fn counterexample_nonstructured(
    problem: &EvolutionProblem,
    mass: &DMatrix<f64>,
    basis: &Basis,
) -> Result<FirstOrderSystem> {
    let inverse = mass
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("mass matrix is singular".into()))?;
    let operator: MatrixFn = Arc::new(move |_| -&inverse);
    reduce_nonstructured(operator, problem, None, basis)
}

/// Instance with the largest discrepancy among seeds `first..first + count`.
pub fn search_counterexample(first: u64, count: u64) -> Result<CounterexampleInstance> {
    let mut best: Option<CounterexampleInstance> = None;
    for seed in first..first + count {
        let candidate = CounterexampleInstance::random(seed)?;
        if best.is_none_or(|b| candidate.relative_discrepancy > b.relative_discrepancy) {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty counterexample search".into()))
}
