use std::sync::Arc;

use nalgebra::DMatrix;

use super::{fixed_initial, ProblemBundle};
use crate::error::Error;
use crate::problem::{
    Constraint, EvolutionProblem, ExactDerivatives, PolynomialDegrees, State, VectorFn,
};

/// Consistency threshold for `g(q0)` and `q0 . p0`.
pub const CONSISTENCY_TOL: f64 = 1e-12;

const P: [usize; 2] = [0, 1];
const Q: [usize; 2] = [2, 3];
const LAMBDA: usize = 4;

/// Multiplier `|p|^2 - gravity q_2` that keeps `|q| = 1` under `q' = -p`.
pub fn pendulum_multiplier(u: &State, gravity: f64) -> f64 {
    u[P[0]].powi(2) + u[P[1]].powi(2) - gravity * u[Q[1]]
}

fn pendulum_builder(gravity: f64) -> crate::problem::ProblemBuilder {
    EvolutionProblem::builder(5)
        .energy(
            move |u| 0.5 * (u[0] * u[0] + u[1] * u[1]) + gravity * u[3],
            move |u| State::from_vec(vec![u[0], u[1], 0.0, gravity, 0.0]),
        )
        .structure(|u, v| {
            State::from_vec(vec![
                v[Q[0]],
                v[Q[1]],
                -v[P[0]],
                -v[P[1]],
                u[Q[0]] * v[Q[0]] + u[Q[1]] * v[Q[1]],
            ])
        })
        .algebraic(vec![LAMBDA])
        .constraint(Constraint {
            count: 1,
            value: Arc::new(|u| State::from_element(1, 0.5 * (u[2] * u[2] + u[3] * u[3] - 1.0))),
            jacobian: Arc::new(|u| DMatrix::from_row_slice(1, 5, &[0.0, 0.0, u[2], u[3], 0.0])),
        })
}

fn constraint_force(u: &State) -> State {
    let l = u[LAMBDA];
    State::from_vec(vec![0.0, 0.0, -l * u[Q[0]], -l * u[Q[1]], 0.0])
}

fn initial_check() -> super::InitialCheckFn {
    Arc::new(|u0| {
        let g = 0.5 * (u0[2] * u0[2] + u0[3] * u0[3] - 1.0);
        let hidden = u0[2] * u0[0] + u0[3] * u0[1];
        if g.abs() > CONSISTENCY_TOL {
            return Err(Error::InconsistentInitialData(format!(
                "constraint violated: g(q0) = {g:e}"
            )));
        }
        if hidden.abs() > CONSISTENCY_TOL {
            return Err(Error::InconsistentInitialData(format!(
                "hidden constraint violated: q0 . p0 = {hidden:e}"
            )));
        }
        Ok(())
    })
}

fn default_state() -> State {
    State::from_vec(vec![0.5, 0.0, 0.0, -1.0, 0.0])
}

/// Pendulum on the unit circle: `u = (p, q, lambda)`, `H = |p|^2/2 + gravity q_2`,
/// `q' = -p`, `p' = H_q + q lambda`, `q . q' = 0`.
pub fn constrained_pendulum(gravity: f64) -> ProblemBundle {
    let problem = pendulum_builder(gravity)
        .source(|_, u| constraint_force(u))
        .derivatives(ExactDerivatives {
            hessian: Arc::new(|_| {
                let mut h = DMatrix::zeros(5, 5);
                h[(0, 0)] = 1.0;
                h[(1, 1)] = 1.0;
                h
            }),
            structure_derivative: Some(Arc::new(|_, v| {
                let mut d = DMatrix::zeros(5, 5);
                d[(4, Q[0])] = v[Q[0]];
                d[(4, Q[1])] = v[Q[1]];
                d
            })),
            source_jacobian: Some(Arc::new(|_, u| {
                let mut d = DMatrix::zeros(5, 5);
                for k in 0..2 {
                    d[(Q[k], Q[k])] = -u[LAMBDA];
                    d[(Q[k], LAMBDA)] = -u[Q[k]];
                }
                d
            })),
        })
        .degrees(PolynomialDegrees {
            energy: Some(2),
            structure: Some(1),
            source: Some(2),
        })
        .build()
        .expect("valid pendulum");
    ProblemBundle::new(
        "constrained_pendulum",
        problem,
        format!(
            "Pendulum with holonomic constraint |q| = 1 enforced through the differentiated \
             constraint and a multiplier; gravity {gravity}."
        ),
        fixed_initial(default_state()),
        |k| Some((k + 1).max((3 * k + 3) / 2)),
        "max(k + 1, ceil((3k + 2) / 2))",
    )
    .with_initial_check(initial_check())
}

/// As [`constrained_pendulum`] with an external force `f_ext(u)` (two
/// components) entering the momentum balance. Jacobians fall back to finite
/// differences.
pub fn constrained_pendulum_forced(gravity: f64, force: VectorFn) -> ProblemBundle {
    let problem = pendulum_builder(gravity)
        .source(move |_, u| {
            let f = force(u);
            let mut out = constraint_force(u);
            out[Q[0]] -= f[0];
            out[Q[1]] -= f[1];
            out
        })
        .build()
        .expect("valid pendulum");
    ProblemBundle::new(
        "constrained_pendulum_forced",
        problem,
        format!("Constrained pendulum with external force; gravity {gravity}."),
        fixed_initial(default_state()),
        |_| None,
        "none (general external force)",
    )
    .with_initial_check(initial_check())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::constraint_drift;
    use crate::newton::NewtonConfig;
    use crate::problems::test_support::{check_derivatives, random_state};
    use crate::quadrature::gauss_legendre;
    use crate::timestepping::{integrate, TimeGrid};

    #[test]
    fn default_state_is_consistent() {
        let b = constrained_pendulum(1.0);
        let u0 = b.initial_state(0);
        assert!(b.check_initial(&u0).is_ok());
        let g = b.problem.constraint().unwrap().eval(&u0);
        assert_eq!(g[0], 0.0);
        assert_eq!(u0[2] * u0[0] + u0[3] * u0[1], 0.0);
    }

    #[test]
    fn inconsistent_data_rejected() {
        let b = constrained_pendulum(1.0);
        let off_circle = State::from_vec(vec![0.5, 0.0, 0.0, -1.1, 0.0]);
        assert!(matches!(
            b.check_initial(&off_circle),
            Err(Error::InconsistentInitialData(_))
        ));
        let radial = State::from_vec(vec![0.0, 0.5, 0.0, -1.0, 0.0]);
        assert!(matches!(
            b.check_initial(&radial),
            Err(Error::InconsistentInitialData(_))
        ));
    }

    #[test]
    fn derivatives_match_differences() {
        let b = constrained_pendulum(9.81);
        for seed in 0..10 {
            let u = random_state(5, seed, 1.0);
            assert!(b.problem.check_gradient_consistency(&u, 1e-6) < 1e-8);
            check_derivatives(&b.problem, &u, 0.0, 1e-7);
        }
    }

    #[test]
    fn zero_force_variant_agrees() {
        let plain = constrained_pendulum(1.0);
        let forced = constrained_pendulum_forced(1.0, Arc::new(|_| State::zeros(2)));
        let u = random_state(5, 2, 1.0);
        let v = random_state(5, 3, 1.0);
        assert_eq!(
            plain.problem.residual(0.0, &u, &v).unwrap(),
            forced.problem.residual(0.0, &u, &v).unwrap()
        );
    }

    #[test]
    fn drift_and_energy_with_exact_quadrature() {
        let b = constrained_pendulum(1.0);
        let u0 = b.initial_state(0);
        let grid = TimeGrid::uniform(5.0, 200).unwrap();
        let quad = gauss_legendre(3).unwrap();
        let traj = integrate(&b.problem, &grid, &u0, 1, &quad, &NewtonConfig::default()).unwrap();
        assert!(constraint_drift(&traj).unwrap() <= 1e-10);
        let h0 = b.problem.energy(&u0);
        let dh = traj
            .energies()
            .iter()
            .map(|h| (h - h0).abs())
            .fold(0.0, f64::max);
        assert!(dh <= 1e-9, "{dh}");
    }

    #[test]
    fn multiplier_converges_to_analytic_value() {
        let b = constrained_pendulum(1.0);
        let u0 = b.initial_state(0);
        let quad = gauss_legendre(3).unwrap();
        let error = |n| {
            let grid = TimeGrid::uniform(5.0, n).unwrap();
            let traj =
                integrate(&b.problem, &grid, &u0, 1, &quad, &NewtonConfig::default()).unwrap();
            // first collocation node after t = T/2
            let step = &traj.steps()[n / 2];
            let u = step.value_at(step.nodes()[0]);
            (u[LAMBDA] - pendulum_multiplier(&u, 1.0)).abs()
        };
        let coarse = error(100);
        let fine = error(200);
        assert!(fine < coarse && fine < 1e-3, "{coarse} {fine}");
    }
}
