use std::sync::Arc;

use nalgebra::DMatrix;

use super::{fixed_initial, ProblemBundle};
use crate::error::{Error, Result};
use crate::problem::{EvolutionProblem, ExactDerivatives, PolynomialDegrees, State};

/// `t -> j(t)` at the interior nodes.
pub type CurrentFn = Arc<dyn Fn(f64) -> State + Send + Sync>;

/// Eddy-current model on `[0, 1]` with `n` cells and `a = 0` at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MqsParams {
    pub n_cells: usize,
    pub sigma: f64,
    pub nu0: f64,
    pub nu2: f64,
}

impl Default for MqsParams {
    fn default() -> Self {
        Self {
            n_cells: 16,
            sigma: 1.0,
            nu0: 1.0,
            nu2: 1.0,
        }
    }
}

/// `j(t, x) = amplitude sin(2 pi t) sin(pi x)^2` at interior nodes.
pub fn default_current(n_cells: usize, amplitude: f64) -> CurrentFn {
    let h = 1.0 / n_cells as f64;
    let bump: State = State::from_fn(n_cells - 1, |i, _| {
        (std::f64::consts::PI * (i + 1) as f64 * h).sin().powi(2)
    });
    Arc::new(move |t| &bump * (amplitude * (std::f64::consts::TAU * t).sin()))
}

/// Edge fluxes `b_e = (a_{e+1} - a_e) / h`, padded with the boundary zeros.
fn fluxes(a: &State, h: f64) -> Vec<f64> {
    let n = a.len() + 1;
    (0..n)
        .map(|e| {
            let left = if e == 0 { 0.0 } else { a[e - 1] };
            let right = if e == n - 1 { 0.0 } else { a[e] };
            (right - left) / h
        })
        .collect()
}

/// Lumped eddy-current problem `sigma h a' = -H'(a) - h j(t)` with magnetic
/// energy `H(a) = h sum_e (nu0 b_e^2 / 2 + nu2 b_e^4 / 4)`. Without `current`
/// the problem is unforced.
pub fn magnetoquasistatics_1d(
    params: MqsParams,
    current: Option<CurrentFn>,
) -> Result<ProblemBundle> {
    let MqsParams {
        n_cells,
        sigma,
        nu0,
        nu2,
    } = params;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "conductivity must be positive, got {sigma}"
        )));
    }
    if n_cells < 2 {
        return Err(Error::InvalidArgument("need at least two cells".into()));
    }
    if !(nu0 > 0.0) || !(nu2 >= 0.0) {
        return Err(Error::InvalidArgument(
            "reluctivity needs nu0 > 0 and nu2 >= 0".into(),
        ));
    }
    let dim = n_cells - 1;
    let h = 1.0 / n_cells as f64;
    let density = move |b: f64| 0.5 * nu0 * b * b + 0.25 * nu2 * b.powi(4);
    let field = move |b: f64| (nu0 + nu2 * b * b) * b;
    let stiffness = move |b: f64| nu0 + 3.0 * nu2 * b * b;

    let mut builder = EvolutionProblem::builder(dim)
        .energy(
            move |a| h * fluxes(a, h).into_iter().map(density).sum::<f64>(),
            move |a| {
                let b = fluxes(a, h);
                State::from_fn(dim, |i, _| field(b[i]) - field(b[i + 1]))
            },
        )
        .constant_structure(DMatrix::identity(dim, dim) * (sigma * h))
        .spd();
    let mut derivatives = ExactDerivatives {
        hessian: Arc::new(move |a| {
            let b = fluxes(a, h);
            let mut m = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                m[(i, i)] = (stiffness(b[i]) + stiffness(b[i + 1])) / h;
                if i + 1 < dim {
                    let off = -stiffness(b[i + 1]) / h;
                    m[(i, i + 1)] = off;
                    m[(i + 1, i)] = off;
                }
            }
            m
        }),
        structure_derivative: None,
        source_jacobian: None,
    };
    let mut source_degree = Some(0);
    if let Some(j) = current {
        builder = builder.source(move |t, _| j(t) * -h);
        // state independent, but not polynomial in time
        source_degree = None;
        derivatives.source_jacobian = None;
    }
    let problem = builder
        .derivatives(derivatives)
        .degrees(PolynomialDegrees {
            energy: Some(if nu2 > 0.0 { 4 } else { 2 }),
            structure: Some(0),
            source: source_degree,
        })
        .build()?;
    let a0 = State::from_fn(dim, |i, _| {
        let x = (i + 1) as f64 * h;
        0.1 * (std::f64::consts::PI * x).sin()
    });
    let min_order: fn(usize) -> Option<usize> = if nu2 > 0.0 {
        |k| Some(2 * (k + 1))
    } else {
        |k| Some(k + 1)
    };
    Ok(ProblemBundle::new(
        "magnetoquasistatics_1d",
        problem,
        format!(
            "One-dimensional eddy-current model, {n_cells} cells, sigma {sigma}, nu0 {nu0}, nu2 {nu2}; \
             energy changes by source work and eddy-current dissipation."
        ),
        fixed_initial(a0),
        min_order,
        if nu2 > 0.0 { "2 (k + 1)" } else { "k + 1" },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::energy_identity_residual;
    use crate::newton::NewtonConfig;
    use crate::problems::test_support::{check_derivatives, random_state};
    use crate::quadrature::gauss_legendre;
    use crate::timestepping::{integrate, TimeGrid};

    #[test]
    fn nonpositive_conductivity_rejected() {
        let p = MqsParams {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(magnetoquasistatics_1d(p, None).is_err());
    }

    #[test]
    fn gradient_and_hessian() {
        let b = magnetoquasistatics_1d(MqsParams::default(), None).unwrap();
        for seed in 0..5 {
            let a = random_state(15, seed, 0.2);
            assert!(b.problem.check_gradient_consistency(&a, 1e-6) < 1e-7);
            check_derivatives(&b.problem, &a, 0.0, 1e-6);
        }
    }

    #[test]
    fn unforced_energy_decays_to_zero() {
        let b = magnetoquasistatics_1d(MqsParams::default(), None).unwrap();
        let grid = TimeGrid::uniform(1.5, 60).unwrap();
        let quad = gauss_legendre(4).unwrap();
        let traj = integrate(
            &b.problem,
            &grid,
            &b.initial_state(0),
            1,
            &quad,
            &NewtonConfig::default(),
        )
        .unwrap();
        let energies = traj.energies();
        assert!(energies.windows(2).all(|w| w[1] < w[0]));
        assert!(energies.last().unwrap() < &(1e-6 * energies[0]));
    }

    #[test]
    fn linear_material_with_source_balances_energy() {
        let params = MqsParams {
            nu2: 0.0,
            ..Default::default()
        };
        let b = magnetoquasistatics_1d(params, Some(default_current(16, 1.0))).unwrap();
        let grid = TimeGrid::uniform(2.0, 100).unwrap();
        let quad = gauss_legendre(3).unwrap();
        let traj = integrate(
            &b.problem,
            &grid,
            &b.initial_state(0),
            1,
            &quad,
            &NewtonConfig::default(),
        )
        .unwrap();
        let report = energy_identity_residual(&b.problem, &traj, &quad).unwrap();
        assert!(
            report.max_abs_residual <= 1e-9,
            "{}",
            report.max_abs_residual
        );
        assert!(report.records.iter().any(|r| r.work.abs() > 1e-6));
    }
}
