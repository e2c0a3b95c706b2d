use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProblemBundle;
use crate::error::{Error, Result};
use crate::galerkin::orthonormalize;
use crate::problem::{EvolutionProblem, ExactDerivatives, PolynomialDegrees, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CahnHilliardParams {
    pub n_cells: usize,
    pub gamma: f64,
    pub length: f64,
    pub mean: f64,
}

impl Default for CahnHilliardParams {
    fn default() -> Self {
        Self {
            n_cells: 64,
            gamma: 0.01,
            length: 1.0,
            mean: 0.0,
        }
    }
}

/// Neumann stiffness with entries `c / h`.
fn stiffness(nodes: usize, c: f64, h: f64) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(nodes, nodes);
    let c = c / h;
    for e in 0..nodes - 1 {
        k[(e, e)] += c;
        k[(e + 1, e + 1)] += c;
        k[(e, e + 1)] -= c;
        k[(e + 1, e)] -= c;
    }
    k
}

/// Cahn-Hilliard `u' = -Laplace(gamma Laplace u - psi'(u))` on `[0, L]` with
/// nodal values `w = V y + mean`, where `V` is an orthonormal basis of the
/// zero-sum vectors. The energy is `w^T K_gamma w / 2 + h sum psi(w_i)` with
/// `psi(s) = (s^2 - 1)^2 / 4`, and `C = h^2 (V^T K_1 V)^{-1}` is the discrete
/// inverse Neumann Laplacian with the lumped mass folded in. `K_c` is the
/// Neumann stiffness with entries `c / h`.
pub fn cahn_hilliard_1d(params: CahnHilliardParams) -> Result<ProblemBundle> {
    let CahnHilliardParams {
        n_cells,
        gamma,
        length,
        mean,
    } = params;
    if n_cells < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 cells, got {n_cells}"
        )));
    }
    if !(gamma > 0.0) || !(length > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidArgument(
            "need gamma > 0, length > 0 and a finite mean".into(),
        ));
    }
    let nodes = n_cells + 1;
    let dim = n_cells;
    let h = length / n_cells as f64;

    let differences: Vec<State> = (0..dim)
        .map(|i| {
            State::from_fn(nodes, |j, _| {
                if j == i {
                    1.0
                } else if j == i + 1 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    let v = Arc::new(orthonormalize(&differences)?.matrix().clone());
    let k = Arc::new(stiffness(nodes, gamma, h));

    // factorized once; C is dense but small
    let reduced_laplacian = v.transpose() * stiffness(nodes, 1.0, h) * &*v;
    let cholesky = reduced_laplacian
        .cholesky()
        .ok_or_else(|| Error::Precondition("reduced stiffness is not positive definite".into()))?;
    let structure = cholesky.inverse() * (h * h);
    let structure = (&structure + structure.transpose()) * 0.5;

    let nodal = {
        let v = Arc::clone(&v);
        move |y: &State| (&*v * y).add_scalar(mean)
    };
    let energy = {
        let (k, nodal) = (Arc::clone(&k), nodal.clone());
        move |y: &State| {
            let w = nodal(y);
            0.5 * w.dot(&(&*k * &w))
                + h * w.iter().map(|s| 0.25 * (s * s - 1.0).powi(2)).sum::<f64>()
        }
    };
    let gradient = {
        let (k, v, nodal) = (Arc::clone(&k), Arc::clone(&v), nodal.clone());
        move |y: &State| {
            let w = nodal(y);
            v.tr_mul(&(&*k * &w + w.map(|s| h * (s * s * s - s))))
        }
    };
    let hessian = {
        let (k, v, nodal) = (Arc::clone(&k), Arc::clone(&v), nodal.clone());
        move |y: &State| {
            let w = nodal(y);
            let full = &*k + DMatrix::from_diagonal(&w.map(|s| h * (3.0 * s * s - 1.0)));
            v.transpose() * full * &*v
        }
    };
    let problem = EvolutionProblem::builder(dim)
        .energy(energy, gradient)
        .constant_structure(structure)
        .spd()
        .derivatives(ExactDerivatives {
            hessian: Arc::new(hessian),
            structure_derivative: None,
            source_jacobian: None,
        })
        .degrees(PolynomialDegrees {
            energy: Some(4),
            structure: Some(0),
            source: Some(0),
        })
        .build()?;

    let initial = {
        let v = Arc::clone(&v);
        move |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amplitudes: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = State::from_fn(nodes, |i, _| {
                let x = i as f64 / n_cells as f64;
                0.1 * amplitudes
                    .iter()
                    .enumerate()
                    .map(|(m, a)| a * (std::f64::consts::PI * (m + 1) as f64 * x).cos())
                    .sum::<f64>()
            });
            v.tr_mul(&w)
        }
    };
    Ok(ProblemBundle::new(
        "cahn_hilliard_1d",
        problem,
        format!(
            "Cahn-Hilliard on [0, {length}] with {n_cells} cells, gamma {gamma}, mean {mean}; \
             states are coordinates in the zero-mean subspace."
        ),
        Arc::new(initial),
        |k| Some(2 * (k + 1)),
        "2 (k + 1)",
    )
    .with_reconstruction(Arc::new(nodal)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::test_support::{check_derivatives, random_state};

    fn small() -> ProblemBundle {
        cahn_hilliard_1d(CahnHilliardParams {
            n_cells: 8,
            gamma: 0.05,
            length: 2.0,
            mean: 0.3,
        })
        .unwrap()
    }

    #[test]
    fn too_few_cells_rejected() {
        assert!(cahn_hilliard_1d(CahnHilliardParams {
            n_cells: 2,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn reconstruction_has_fixed_mean() {
        let b = small();
        for seed in 0..10 {
            let w = b.reconstruct(&random_state(8, seed, 1.0));
            assert_eq!(w.len(), 9);
            assert!((w.mean() - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn structure_is_positive_definite() {
        let b = small();
        for seed in 0..20 {
            let y = random_state(8, seed, 1.0);
            assert!(b.problem.apply_structure(&y, &y).dot(&y) > 0.0);
        }
        let c = b.problem.structure_matrix(&State::zeros(8));
        assert!((&c - c.transpose()).amax() == 0.0);
    }

    #[test]
    fn structure_inverts_neumann_laplacian() {
        // K_1 C w = h^2 w for zero-sum w lifted to the nodes
        let b = small();
        let h = 0.25;
        let k = stiffness(9, 1.0, h);
        let v = orthonormalize(
            &(0..8)
                .map(|i| {
                    State::from_fn(9, |j, _| {
                        if j == i {
                            1.0
                        } else if j == i + 1 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y = random_state(8, 5, 1.0);
        let cy = b.problem.apply_structure(&State::zeros(8), &y);
        let lhs = v.matrix().tr_mul(&(&k * (v.matrix() * cy)));
        assert!((lhs - y * (h * h)).amax() < 1e-12);
    }

    #[test]
    fn energy_matches_direct_sum() {
        let b = small();
        let y = random_state(8, 1, 1.0);
        let w = b.reconstruct(&y);
        let h = 0.25;
        let gradient_part: f64 = (0..8)
            .map(|e| 0.5 * 0.05 * ((w[e + 1] - w[e]) / h).powi(2) * h)
            .sum();
        let well: f64 = w.iter().map(|s| 0.25 * (s * s - 1.0).powi(2) * h).sum();
        assert!((b.problem.energy(&y) - gradient_part - well).abs() < 1e-13);
    }

    #[test]
    fn derivatives() {
        let b = small();
        let y = random_state(8, 2, 1.0);
        assert!(b.problem.check_gradient_consistency(&y, 1e-6) < 1e-8);
        check_derivatives(&b.problem, &y, 0.0, 1e-7);
    }
}
