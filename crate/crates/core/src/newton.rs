//! Dense Newton iteration for square nonlinear systems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::{Error as CrateError, Result as CrateResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// Exact blocks when the problem supplies them, finite differences otherwise.
    #[default]
    Auto,
    /// Always forward differences with step `1e-7 (1 + |x_j|)`.
    FiniteDifference,
}

/// Initial guess for the step coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Predictor {
    /// Zero derivative coefficients, i.e. `u` frozen at the step start.
    #[default]
    Constant,
    /// Extrapolate the previous step's polynomial.
    Extrapolate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Bound on the sup-norm of the residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub jacobian: JacobianMode,
    /// Scales each Newton update; `1.0` is the undamped iteration.
    pub damping: f64,
    pub predictor: Predictor,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 25,
            jacobian: JacobianMode::Auto,
            damping: 1.0,
            predictor: Predictor::Constant,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> CrateResult<()> {
        if !(self.tolerance > 0.0) {
            return Err(CrateError::InvalidArgument(
                "Newton tolerance must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(CrateError::InvalidArgument(
                "Newton needs at least one iteration".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(CrateError::InvalidArgument(
                "damping must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum NewtonError {
    #[error("Newton did not converge in {iterations} iterations (residual {residual_norm:e})")]
    NonConvergence {
        best: DVector<f64>,
        residual_norm: f64,
        iterations: usize,
    },
    #[error("singular Jacobian at iteration {iteration} (pivot {pivot:e}, scale {scale:e})")]
    SingularJacobian {
        best: DVector<f64>,
        residual_norm: f64,
        iteration: usize,
        pivot: f64,
        scale: f64,
    },
}

impl NewtonError {
    pub fn best(&self) -> &DVector<f64> {
        match self {
            Self::NonConvergence { best, .. } | Self::SingularJacobian { best, .. } => best,
        }
    }

    pub fn residual_norm(&self) -> f64 {
        match self {
            Self::NonConvergence { residual_norm, .. }
            | Self::SingularJacobian { residual_norm, .. } => *residual_norm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Solves `residual(x) = 0` with finite-difference Jacobians.
pub fn newton_solve<R>(
    residual: R,
    guess: DVector<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonSolution, NewtonError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    newton_solve_with(
        residual,
        None::<fn(&DVector<f64>) -> DMatrix<f64>>,
        guess,
        cfg,
    )
}

/// Solves `residual(x) = 0`; uses `jacobian` when given and the config allows it.
pub fn newton_solve_with<R, J>(
    residual: R,
    jacobian: Option<J>,
    guess: DVector<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonSolution, NewtonError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let exact = match cfg.jacobian {
        JacobianMode::Auto => jacobian.as_ref(),
        JacobianMode::FiniteDifference => None,
    };
    let mut x = guess;
    let mut r = residual(&x);
    let mut norm = sup_norm(&r);
    let mut best = (x.clone(), norm);

    for iteration in 0..cfg.max_iterations {
        if norm <= cfg.tolerance {
            return Ok(NewtonSolution {
                x,
                iterations: iteration,
                residual_norm: norm,
            });
        }
        if !norm.is_finite() {
            break;
        }
        let jac = match exact {
            Some(j) => j(&x),
            None => finite_difference_jacobian(&residual, &x, &r),
        };
        let scale = jac.amax();
        let lu = jac.lu();
        let pivot = lu.u().diagonal().amin();
        if !(pivot >= 1e-14 * scale) || scale == 0.0 {
            return Err(NewtonError::SingularJacobian {
                best: best.0,
                residual_norm: best.1,
                iteration,
                pivot,
                scale,
            });
        }
        let Some(delta) = lu.solve(&r) else {
            return Err(NewtonError::SingularJacobian {
                best: best.0,
                residual_norm: best.1,
                iteration,
                pivot,
                scale,
            });
        };
        x.axpy(-cfg.damping, &delta, 1.0);
        r = residual(&x);
        norm = sup_norm(&r);
        if norm < best.1 {
            best = (x.clone(), norm);
        }
    }

    if norm <= cfg.tolerance {
        return Ok(NewtonSolution {
            x,
            iterations: cfg.max_iterations,
            residual_norm: norm,
        });
    }
    Err(NewtonError::NonConvergence {
        best: best.0,
        residual_norm: best.1,
        iterations: cfg.max_iterations,
    })
}

pub(crate) fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(
        0.0_f64,
        |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
    )
}

fn finite_difference_jacobian<R>(residual: &R, x: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut probe = x.clone();
    for j in 0..n {
        // power-of-two step near 1e-7 (1 + |x_j|), so x_j + h is exact
        let h = (1e-7 * (1.0 + x[j].abs())).log2().round().exp2();
        probe[j] = x[j] + h;
        let col = (residual(&probe) - r0) / h;
        jac.set_column(j, &col);
        probe[j] = x[j];
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn linear_map_in_one_iteration() {
        let sol = newton_solve(
            |x| x * 2.0 - scalar(4.0),
            scalar(0.0),
            &NewtonConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-12);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn square_root_of_two() {
        let sol = newton_solve(
            |x| scalar(x[0] * x[0] - 2.0),
            scalar(1.0),
            &NewtonConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2f64.sqrt(), epsilon = 1e-12);
        assert!(sol.iterations <= 6, "{} iterations", sol.iterations);
    }

    #[test]
    fn square_root_with_exact_jacobian() {
        let sol = newton_solve_with(
            |x: &DVector<f64>| scalar(x[0] * x[0] - 2.0),
            Some(|x: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * x[0])),
            scalar(1.0),
            &NewtonConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2f64.sqrt(), epsilon = 1e-14);
        assert_eq!(sol.iterations, 5);
    }

    #[test]
    fn no_real_root_fails() {
        let err = newton_solve(
            |x| scalar(x[0] * x[0] + 1.0),
            scalar(1.0),
            &NewtonConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NewtonError::NonConvergence { .. }), "{err}");
        assert!(err.residual_norm() >= 1.0);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let err = newton_solve_with(
            |x: &DVector<f64>| DVector::from_vec(vec![x[0] + x[1] - 1.0, 2.0 * x[0] + 2.0 * x[1]]),
            Some(|_: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0])),
            DVector::zeros(2),
            &NewtonConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NewtonError::SingularJacobian { .. }));
    }

    #[test]
    fn damping_still_converges() {
        let cfg = NewtonConfig {
            damping: 0.5,
            max_iterations: 200,
            ..Default::default()
        };
        let sol = newton_solve(|x| scalar(x[0] * x[0] - 2.0), scalar(1.0), &cfg).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(NewtonConfig::default().validate().is_ok());
        assert!(NewtonConfig {
            tolerance: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NewtonConfig {
            max_iterations: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NewtonConfig {
            damping: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
