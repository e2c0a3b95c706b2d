//! Property tests of the structural invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use structint::audit::{energy_identity_residual, energy_violations, expm};
use structint::cli::RunConfig;
use structint::galerkin::{reduce, Basis, CounterexampleInstance};
use structint::problems::{harmonic_oscillator, quadratic_gradient_flow, random_skew_quadratic};
use structint::{gauss_legendre, integrate, step, NewtonConfig, State, TimeGrid};

fn spd(seed: u64, n: usize) -> DMatrix<f64> {
    let b = Basis::random(n, n, seed).unwrap();
    let q = b.matrix();
    let eig = DVector::from_fn(n, |i, _| 0.2 + i as f64 * 0.7);
    let a = q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oscillator_step_conserves_energy(
        p in -2.0f64..2.0, q in -2.0f64..2.0, tau in 0.01f64..1.5, k in 0usize..4,
    ) {
        let b = harmonic_oscillator();
        let u = State::from_vec(vec![p, q]);
        let quad = gauss_legendre(k + 1).unwrap();
        let s = step(&b.problem, 0.0, tau, &u, k, &quad, &NewtonConfig::default()).unwrap();
        prop_assert_eq!(s.value_at(0.0), u.clone());
        let scale = 1.0 + b.problem.energy(&u);
        prop_assert!((b.problem.energy(&s.end_value()) - b.problem.energy(&u)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn gradient_flow_identity_within_bound(seed in 0u64..1000, n in 1usize..5, steps in 1usize..8, k in 0usize..3) {
        let b = quadratic_gradient_flow(spd(seed, n)).unwrap();
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        let quad = gauss_legendre(k + 1).unwrap();
        let traj = integrate(&b.problem, &grid, &b.initial_state(0), k, &quad, &NewtonConfig::default()).unwrap();
        let report = energy_identity_residual(&b.problem, &traj, &quad).unwrap();
        prop_assert_eq!(report.records.len(), steps);
        for (i, r) in report.records.iter().enumerate() {
            prop_assert_eq!(r.step, i + 1);
            prop_assert!(r.dissipation >= 0.0);
        }
        prop_assert!(report.exact_integration && report.bound_satisfied());
        prop_assert!(report.monotonicity_violations.is_empty());
    }

    #[test]
    fn reduction_keeps_skew_structure(seed in 0u64..1000, half in 1usize..4, r in 1usize..6) {
        let n = 2 * half;
        let r = r.min(n);
        let b = random_skew_quadratic(n, seed).unwrap();
        let basis = Basis::random(n, r, seed + 1).unwrap();
        let reduced = reduce(&b.problem, &basis).unwrap();
        prop_assert!(reduced.flags().skew);
        let c = reduced.structure_matrix(&State::zeros(r));
        prop_assert!((&c + c.transpose()).amax() <= 1e-13);
        let y = State::from_fn(r, |i, _| (i as f64 + 1.0).sin());
        let lifted = basis.lift(&y).unwrap();
        prop_assert!((reduced.energy(&y) - b.problem.energy(&lifted)).abs() <= 1e-13);
    }

    #[test]
    fn counterexample_discrepancy_formula(seed in 0u64..5000) {
        let c = CounterexampleInstance::random(seed).unwrap();
        let m = c.mass_matrix();
        let v = DVector::from_column_slice(&c.direction);
        let a = v.dot(&(&m * &v));
        let b = v.dot(&(m.try_inverse().unwrap() * &v));
        // Cauchy-Schwarz in the M inner product: a b >= 1
        prop_assert!(a * b >= 1.0 - 1e-12);
        prop_assert!((c.relative_discrepancy - (a * b - 1.0)).abs() <= 1e-10 * a * b);
    }

    #[test]
    fn geometric_grid_is_graded(t_end in 0.5f64..100.0, steps in 2usize..300, frac in 0.01f64..1.0) {
        let first = frac * t_end / steps as f64;
        let grid = TimeGrid::geometric(t_end, steps, first).unwrap();
        let nodes = grid.nodes();
        prop_assert_eq!(nodes.len(), steps + 1);
        prop_assert_eq!(nodes[steps], t_end);
        prop_assert!((grid.step_size(1) - first).abs() <= 1e-9 * first);
        for n in 2..=steps {
            prop_assert!(grid.step_size(n) >= grid.step_size(n - 1) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn skew_exponential_is_orthogonal(seed in 0u64..1000, n in 1usize..6) {
        let b = Basis::random(n, n, seed).unwrap();
        let a = b.matrix() - b.matrix().transpose();
        let e = expm(&(a * 3.0));
        prop_assert!((e.transpose() * &e - DMatrix::identity(n, n)).amax() <= 1e-12);
    }

    #[test]
    fn violations_are_exactly_the_increases(energies in prop::collection::vec(-5.0f64..5.0, 0..30)) {
        let found = energy_violations(&energies, 0.0);
        let expected: Vec<usize> = (1..energies.len()).filter(|&i| energies[i] > energies[i - 1]).collect();
        prop_assert_eq!(found, expected);
    }

    #[test]
    fn config_parser_never_panics(text in "[a-zA-Z_0-9 =.,#;\n-]{0,120}") {
        let _ = RunConfig::parse(&text);
    }
}
