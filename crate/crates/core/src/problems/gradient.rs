use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fixed_initial, ProblemBundle};
use crate::audit::expm;
use crate::error::{Error, Result};
use crate::problem::{EvolutionProblem, ExactDerivatives, PolynomialDegrees, State};

/// `u' = -A u` with `C = I`, `H = u^T A u / 2`.
pub fn quadratic_gradient_flow(a: DMatrix<f64>) -> Result<ProblemBundle> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(
            "gradient flow matrix must be square".into(),
        ));
    }
    let n = a.nrows();
    let asym = (&a - a.transpose()).amax();
    if asym > 1e-14 * a.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "gradient flow matrix is not symmetric (defect {asym:e})"
        )));
    }
    let (ae, ag, ah, ax) = (a.clone(), a.clone(), a.clone(), a);
    let problem = EvolutionProblem::builder(n)
        .energy(move |u| 0.5 * u.dot(&(&ae * u)), move |u| &ag * u)
        .constant_structure(DMatrix::identity(n, n))
        .spd()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(move |_| ah.clone()),
            structure_derivative: None,
            source_jacobian: None,
        })
        .degrees(PolynomialDegrees {
            energy: Some(2),
            structure: Some(0),
            source: Some(0),
        })
        .build()?;
    Ok(ProblemBundle::new(
        "quadratic_gradient_flow",
        problem,
        "Linear gradient flow; the energy decays to the steady state 0.",
        fixed_initial(State::from_element(n, 1.0)),
        |k| Some(k + 1),
        "k + 1",
    )
    .with_exact(Arc::new(move |t, u0| expm(&(&ax * -t)) * u0)))
}

/// `u' = -(u^3 - u)` componentwise, `H = sum (u_i^2 - 1)^2 / 4`. Initial
/// states are uniform in `[-0.9, 0.9]^n`.
pub fn double_well_gradient_flow(n: usize) -> Result<ProblemBundle> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let problem = EvolutionProblem::builder(n)
        .energy(
            |u| u.iter().map(|x| 0.25 * (x * x - 1.0).powi(2)).sum(),
            |u| u.map(|x| x * x * x - x),
        )
        .constant_structure(DMatrix::identity(n, n))
        .spd()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(|u| DMatrix::from_diagonal(&u.map(|x| 3.0 * x * x - 1.0))),
            structure_derivative: None,
            source_jacobian: None,
        })
        .degrees(PolynomialDegrees {
            energy: Some(4),
            structure: Some(0),
            source: Some(0),
        })
        .build()?;
    Ok(ProblemBundle::new(
        "double_well_gradient_flow",
        problem,
        "Decoupled double-well gradient flow with minima at +1 and -1.",
        Arc::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            State::from_fn(n, |_, _| rng.random_range(-0.9..0.9))
        }),
        |k| Some(2 * (k + 1)),
        "2 (k + 1)",
    ))
}
