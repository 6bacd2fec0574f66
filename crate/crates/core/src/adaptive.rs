//! Adaptive rejection of matched disturbances `d = f(q, p)' theta`.
//!
//! The nominal torque is augmented with `f' theta_hat` and the estimate is
//! driven by the passive output `p_tilde_1`:
//! `theta_hat_dot = -p_tilde_1 Gamma^-1 f`. Along the closed loop,
//! `V = H_d + 1/2 theta_tilde' Gamma theta_tilde` decreases at rate
//! `kv p_tilde_1^2`. No integrability of `f` is needed.
//!
//! With the weight `Gamma^-1` in `V` the cross term only cancels for
//! `Gamma = I`; the weight `Gamma` is the one that pairs with this update law.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::controller::{solve2, IdaPbc};
use crate::error::{Error, Result};
use crate::model::State;
use crate::regressor::RegressorSpec;

/// Regressor plus the true parameter vector used on the plant side.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    pub regressor: RegressorSpec,
    pub theta: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn new(regressor: RegressorSpec, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != regressor.len() {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!(
                    "length {} does not match regressor length {}",
                    theta.len(),
                    regressor.len()
                ),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: "entries must be finite".into(),
            });
        }
        Ok(Self { regressor, theta })
    }

    /// The disturbance torque acting on the plant.
    pub fn torque(&self, s: &State) -> f64 {
        self.regressor.dot(s, &self.theta)
    }
}

/// Symmetric positive definite adaptation gain `Gamma` with its inverse cached.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationGain {
    gamma: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
}

impl AdaptationGain {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidParameter {
            name: "gamma",
            reason,
        };
        if !gamma.is_square() || gamma.nrows() == 0 {
            return Err(invalid(format!(
                "must be a non-empty square matrix, got {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if (&gamma - gamma.transpose()).abs().max() > 1e-12 * (1.0 + gamma.abs().max()) {
            return Err(invalid("must be symmetric".into()));
        }
        let chol = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("must be positive definite".into()))?;
        let gamma_inv = chol.inverse();
        Ok(Self { gamma, gamma_inv })
    }

    /// `Gamma = gamma * I`.
    pub fn scalar(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be finite and > 0, got {gamma}"),
            });
        }
        Self::new(DMatrix::identity(dim, dim) * gamma)
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.gamma_inv
    }
}

/// Parameter estimate owned by one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub theta_hat: DVector<f64>,
    pub gain: AdaptationGain,
}

impl AdaptiveState {
    pub fn new(theta_hat: Vec<f64>, gain: AdaptationGain) -> Result<Self> {
        if theta_hat.len() != gain.dim() {
            return Err(Error::InvalidParameter {
                name: "theta_hat0",
                reason: format!(
                    "length {} does not match gain dimension {}",
                    theta_hat.len(),
                    gain.dim()
                ),
            });
        }
        Ok(Self {
            theta_hat: DVector::from_vec(theta_hat),
            gain,
        })
    }
}

/// `theta_hat_dot = -p_tilde_1 Gamma^-1 f(q, p)` with `p_tilde = M_d^-1 p`.
pub fn adaptation_rhs(
    regressor: &RegressorSpec,
    gain: &AdaptationGain,
    s: &State,
    md: &Matrix2<f64>,
) -> Result<DVector<f64>> {
    let det = md.determinant();
    if !(md[(0, 0)] > 0.0 && det > 0.0) {
        return Err(Error::DefinitenessLost {
            q2: s.q[1],
            d1: md[(0, 0)],
            det,
        });
    }
    let p_tilde = solve2(md, &s.p);
    let f = DVector::from_vec(regressor.eval(s));
    Ok(gain.inverse() * f * (-p_tilde[0]))
}

/// Nominal energy-shaping torque plus the disturbance estimate `f' theta_hat`.
pub fn robust_control(
    controller: &IdaPbc,
    regressor: &RegressorSpec,
    theta_hat: &DVector<f64>,
    s: &State,
) -> Result<f64> {
    let u = controller.control_law(s)?;
    Ok(u + regressor.dot(s, theta_hat.as_slice()))
}

/// `V = H_d + 1/2 theta_tilde' Gamma theta_tilde`.
pub fn lyapunov(hd: f64, theta_tilde: &DVector<f64>, gain: &AdaptationGain) -> f64 {
    hd + 0.5 * theta_tilde.dot(&(gain.matrix() * theta_tilde))
}
