//! Cramér-Rao bound of the two-way TOA estimator and the success test built
//! on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::measurement::{build_weights, jacobian_h};
use crate::model::{Scenario, StateVector};

/// Fisher matrices with a larger condition number are unobservable.
pub const MAX_CONDITION: f64 = 1e12;

/// A run succeeds when its position error is within this multiple of the
/// bound.
pub const SUCCESS_FACTOR: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct CrlbReport {
    /// `JᵀWJ` at the true state, `(2N+2)²`, [`StateVector`] order.
    pub fim: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    /// `√tr` of the position block of the covariance, meters.
    pub pos_rmse_bound: f64,
    /// `3 ×` the position bound, meters.
    pub threshold: f64,
}

/// Bound from a given Jacobian and weight diagonal.
pub fn crlb_from_jacobian(jac: &DMatrix<f64>, weights: &DVector<f64>, dim: usize) -> Result<CrlbReport> {
    if jac.nrows() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "Jacobian has {} rows, {} weights",
            jac.nrows(),
            weights.len()
        )));
    }
    if jac.nrows() < jac.ncols() {
        return Err(Error::UnobservableGeometry { cond: f64::INFINITY });
    }
    let jw = jac.transpose() * DMatrix::from_diagonal(weights);
    let fim = &jw * jac;
    let fim = (&fim + fim.transpose()) * 0.5;
    let eig = SymmetricEigen::new(fim.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.amax();
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::UnobservableGeometry { cond });
    }
    let covariance = fim
        .clone()
        .cholesky()
        .ok_or(Error::UnobservableGeometry { cond })?
        .inverse();
    let pos_rmse_bound = (0..dim).map(|k| covariance[(k, k)]).sum::<f64>().sqrt();
    Ok(CrlbReport { fim, covariance, pos_rmse_bound, threshold: SUCCESS_FACTOR * pos_rmse_bound })
}

/// Bound at the scenario's true state with its noise levels.
pub fn compute_crlb(scenario: &Scenario) -> Result<CrlbReport> {
    if 2 * scenario.num_anchors() < 2 * scenario.dim() + 2 {
        return Err(Error::UnobservableGeometry { cond: f64::INFINITY });
    }
    scenario.validate()?;
    let theta = StateVector::from_state(&scenario.ud);
    let jac = jacobian_h(&theta, &scenario.anchor_positions(), &scenario.schedule.delays)?;
    let w = build_weights(&scenario.sigma_an, scenario.sigma_ud)?;
    crlb_from_jacobian(&jac, w.diagonal(), scenario.dim())
}

/// `‖p̂ − p‖ ≤ threshold`; the boundary counts as a success.
pub fn is_success(p_hat: &DVector<f64>, p_true: &DVector<f64>, threshold: f64) -> bool {
    (p_hat - p_true).norm() <= threshold
}
