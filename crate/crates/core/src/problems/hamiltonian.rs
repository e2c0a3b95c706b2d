use std::sync::Arc;

use nalgebra::{dmatrix, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fixed_initial, ProblemBundle};
use crate::audit::expm;
use crate::error::{Error, Result};
use crate::problem::{EvolutionProblem, ExactDerivatives, PolynomialDegrees, State};

fn canonical_structure() -> DMatrix<f64> {
    dmatrix![0.0, 1.0; -1.0, 0.0]
}

/// `u = (p, q)`, `H = (p^2 + q^2) / 2`, `q' = -p`, `p' = q`.
pub fn harmonic_oscillator() -> ProblemBundle {
    let problem = EvolutionProblem::builder(2)
        .energy(|u| 0.5 * u.norm_squared(), |u| u.clone())
        .constant_structure(canonical_structure())
        .skew()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(|_| DMatrix::identity(2, 2)),
            structure_derivative: None,
            source_jacobian: None,
        })
        .degrees(PolynomialDegrees {
            energy: Some(2),
            structure: Some(0),
            source: Some(0),
        })
        .build()
        .expect("valid oscillator");
    ProblemBundle::new(
        "harmonic_oscillator",
        problem,
        "Linear Hamiltonian system with constant skew structure; energy is conserved.",
        fixed_initial(State::from_vec(vec![0.0, 1.0])),
        |k| Some(k + 1),
        "k + 1",
    )
    .with_exact(Arc::new(|t, u0| {
        let (s, c) = t.sin_cos();
        let (p0, q0) = (u0[0], u0[1]);
        State::from_vec(vec![p0 * c + q0 * s, q0 * c - p0 * s])
    }))
}

/// `H = p^2 / 2 + 1 - cos q` with the oscillator's structure, so `q'' = -sin q`.
pub fn nonlinear_pendulum() -> ProblemBundle {
    let problem = EvolutionProblem::builder(2)
        .energy(
            |u| 0.5 * u[0] * u[0] + 1.0 - u[1].cos(),
            |u| State::from_vec(vec![u[0], u[1].sin()]),
        )
        .constant_structure(canonical_structure())
        .skew()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(|u| dmatrix![1.0, 0.0; 0.0, u[1].cos()]),
            structure_derivative: None,
            source_jacobian: None,
        })
        .build()
        .expect("valid pendulum");
    ProblemBundle::new(
        "nonlinear_pendulum",
        problem,
        "Hamiltonian pendulum; the energy is not polynomial, so exactness needs overintegration.",
        fixed_initial(State::from_vec(vec![0.0, 1.0])),
        |_| None,
        "none (non-polynomial energy)",
    )
}

/// `C = B - B^T`, `H = u^T Q u / 2` with `Q = I + A A^T / n`; `B`, `A`
/// Gaussian from `seed`.
pub fn random_skew_quadratic(n: usize, seed: u64) -> Result<ProblemBundle> {
    if n < 2 || n % 2 == 1 {
        // skew matrices of odd size are singular
        return Err(Error::InvalidArgument(format!("skew system needs an even n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let b = DMatrix::from_fn(n, n, |_, _| gauss());
    let a = DMatrix::from_fn(n, n, |_, _| gauss());
    let c = &b - b.transpose();
    let q = DMatrix::identity(n, n) + &a * a.transpose() / n as f64;
    let generator = c
        .clone()
        .lu()
        .solve(&q)
        .ok_or_else(|| Error::Precondition("random skew structure is singular".into()))?;
    let u0 = State::from_fn(n, |_, _| gauss());
    let u0 = &u0 / u0.norm();

    let (qe, qg, qh) = (q.clone(), q.clone(), q);
    let problem = EvolutionProblem::builder(n)
        .energy(move |u| 0.5 * u.dot(&(&qe * u)), move |u| &qg * u)
        .constant_structure(c)
        .skew()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(move |_| qh.clone()),
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
        "random_skew_quadratic",
        problem,
        format!("Constant skew structure and quadratic energy in {n} dimensions, seed {seed}."),
        fixed_initial(u0),
        |k| Some(k + 1),
        "k + 1",
    )
    .with_exact(Arc::new(move |t, u0| expm(&(&generator * -t)) * u0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newton::NewtonConfig;
    use crate::problems::test_support::{check_derivatives, random_state};
    use crate::quadrature::gauss_legendre;
    use crate::timestepping::{integrate, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn closed_form_residual(bundle: &ProblemBundle, u0: &State) -> f64 {
        // fourth-order central difference
        let h = 1e-3;
        let at = |t: f64| bundle.exact_solution(t, u0).unwrap();
        (0..20)
            .map(|i| {
                let t = 0.37 * i as f64;
                let u = at(t);
                let du = (at(t - 2.0 * h) - at(t + 2.0 * h) + (at(t + h) - at(t - h)) * 8.0)
                    / (12.0 * h);
                bundle.problem.residual(t, &u, &du).unwrap().amax()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn oscillator_quarter_period() {
        let b = harmonic_oscillator();
        let u = b
            .exact_solution(
                std::f64::consts::FRAC_PI_2,
                &State::from_vec(vec![0.0, 1.0]),
            )
            .unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn oscillator_closed_form_solves_problem() {
        let b = harmonic_oscillator();
        for seed in 0..5 {
            let u0 = random_state(2, seed, 2.0);
            assert!(closed_form_residual(&b, &u0) <= 1e-8);
            let h0 = b.problem.energy(&u0);
            for t in [0.1, 1.0, 10.0] {
                assert_abs_diff_eq!(
                    b.problem.energy(&b.exact_solution(t, &u0).unwrap()),
                    h0,
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn skew_quadratic_closed_form_solves_problem() {
        let b = random_skew_quadratic(6, 3).unwrap();
        let r = closed_form_residual(&b, &b.initial_state(0));
        assert!(r <= 1e-8, "{r}");
        check_derivatives(&b.problem, &random_state(6, 1, 1.0), 0.0, 1e-7);
    }

    #[test]
    fn odd_skew_dimension_rejected() {
        assert!(random_skew_quadratic(5, 0).is_err());
        assert!(random_skew_quadratic(4, 0).is_ok());
    }

    #[test]
    fn pendulum_derivatives_and_gradient() {
        let b = nonlinear_pendulum();
        for seed in 0..10 {
            let u = random_state(2, seed, 3.0);
            assert!(b.problem.check_gradient_consistency(&u, 1e-6) < 1e-8);
            check_derivatives(&b.problem, &u, 0.0, 1e-7);
        }
    }

    #[test]
    fn pendulum_small_angle_period() {
        let b = nonlinear_pendulum();
        let u0 = State::from_vec(vec![0.0, 0.1]);
        let grid = TimeGrid::uniform(8.0, 800).unwrap();
        let quad = gauss_legendre(3).unwrap();
        let traj = integrate(&b.problem, &grid, &u0, 1, &quad, &NewtonConfig::default()).unwrap();
        // first downward zero crossing of q happens at a quarter period
        let q: Vec<f64> = traj.nodal_states().iter().map(|u| u[1]).collect();
        let t = traj.times();
        let i = q
            .windows(2)
            .position(|w| w[0] > 0.0 && w[1] <= 0.0)
            .unwrap();
        let crossing = t[i] + (t[i + 1] - t[i]) * q[i] / (q[i] - q[i + 1]);
        let period = 4.0 * crossing;
        assert!(
            (period / std::f64::consts::TAU - 1.0).abs() < 0.01,
            "period {period}"
        );
    }

    #[test]
    fn pendulum_energy_with_overintegration() {
        let b = nonlinear_pendulum();
        let u0 = b.initial_state(0);
        let grid = TimeGrid::uniform(10.0, 100).unwrap();
        let quad = gauss_legendre(6).unwrap();
        let traj = integrate(&b.problem, &grid, &u0, 1, &quad, &NewtonConfig::default()).unwrap();
        let h0 = b.problem.energy(&u0);
        let drift = traj
            .energies()
            .iter()
            .map(|h| (h - h0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-9, "drift {drift}");
    }

    #[test]
    fn pendulum_fixed_point() {
        let b = nonlinear_pendulum();
        let grid = TimeGrid::uniform(5.0, 20).unwrap();
        let quad = gauss_legendre(2).unwrap();
        let traj = integrate(
            &b.problem,
            &grid,
            &State::zeros(2),
            1,
            &quad,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(traj.nodal_states().iter().all(|u| u.amax() == 0.0));
    }
}
