//! Open-loop port-Hamiltonian model of the rotary inverted pendulum.
//!
//! Coordinates: `q1` is the actuated arm angle, `q2` the pendulum angle
//! measured from the upright position. Angles are not wrapped.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lumped inertia/potential constants `p1..p5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
}

/// Raw link data from which [`RobotParams`] can be derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl PhysicalParams {
    pub fn to_robot_params(&self) -> Result<RobotParams> {
        let Self {
            m1,
            m2,
            l1,
            l2,
            i1,
            i2,
            g,
        } = *self;
        RobotParams::new([
            i1 + m1 * l1 * l1,
            m2 * l2 * l2,
            m2 * l1 * l2,
            i2 + m2 * l2 * l2,
            m2 * l2 * g,
        ])
    }
}

impl RobotParams {
    /// Validated constructor: all entries finite and positive, and `p1 p4 > p3^2`.
    pub fn new(p: [f64; 5]) -> Result<Self> {
        const NAMES: [&str; 5] = ["p1", "p2", "p3", "p4", "p5"];
        for (name, v) in NAMES.iter().zip(p) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let params = Self {
            p1: p[0],
            p2: p[1],
            p3: p[2],
            p4: p[3],
            p5: p[4],
        };
        if params.p1 * params.p4 - params.p3 * params.p3 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "p3",
                reason: format!(
                    "p1*p4 - p3^2 must be > 0, got {}",
                    params.p1 * params.p4 - params.p3 * params.p3
                ),
            });
        }
        Ok(params)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.p1, self.p2, self.p3, self.p4, self.p5]
    }

    /// Inertia matrix `M(q2)`.
    pub fn inertia(&self, q2: f64) -> Matrix2<f64> {
        let (s, c) = q2.sin_cos();
        let off = self.p3 * c;
        Matrix2::new(self.p1 + self.p2 * s * s, off, off, self.p4)
    }

    /// `dM/dq2`.
    pub fn inertia_derivative(&self, q2: f64) -> Matrix2<f64> {
        let (s, c) = q2.sin_cos();
        let off = -self.p3 * s;
        Matrix2::new(2.0 * self.p2 * s * c, off, off, 0.0)
    }

    /// `det M(q2)`, always `>= p1 p4 - p3^2 > 0`.
    pub fn inertia_det(&self, q2: f64) -> f64 {
        let (s, c) = q2.sin_cos();
        (self.p1 + self.p2 * s * s) * self.p4 - self.p3 * self.p3 * c * c
    }

    pub fn inertia_inverse(&self, q2: f64) -> Matrix2<f64> {
        let m = self.inertia(q2);
        let det = self.inertia_det(q2);
        Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
    }

    pub fn potential(&self, q2: f64) -> f64 {
        self.p5 * q2.cos()
    }

    /// Total energy `H = p5 cos q2 + 1/2 p' M^-1 p`.
    pub fn hamiltonian(&self, s: &State) -> f64 {
        let v = self.inertia_inverse(s.q[1]) * s.p;
        self.potential(s.q[1]) + 0.5 * s.p.dot(&v)
    }

    /// `dH/dq`; the first component vanishes since `H` does not depend on `q1`.
    pub fn grad_q_hamiltonian(&self, s: &State) -> Vector2<f64> {
        let q2 = s.q[1];
        let v = self.inertia_inverse(q2) * s.p;
        let kinetic = -0.5 * v.dot(&(self.inertia_derivative(q2) * v));
        Vector2::new(0.0, -self.p5 * q2.sin() + kinetic)
    }

    /// `dH/dp = M^-1 p`, i.e. the joint velocities.
    pub fn grad_p_hamiltonian(&self, s: &State) -> Vector2<f64> {
        self.inertia_inverse(s.q[1]) * s.p
    }

    /// Right-hand side of the disturbed open-loop dynamics for torque `u` and
    /// matched disturbance `d`.
    pub fn open_loop_rhs(&self, s: &State, u: f64, d: f64) -> StateDerivative {
        let q_dot = self.grad_p_hamiltonian(s);
        let p_dot = -self.grad_q_hamiltonian(s) + InputMap::G * (u - d);
        StateDerivative { q_dot, p_dot }
    }
}

/// Generalized coordinates and momenta, `p = M(q) q_dot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub q: Vector2<f64>,
    pub p: Vector2<f64>,
}

impl State {
    pub fn new(q: [f64; 2], p: [f64; 2]) -> Self {
        Self {
            q: Vector2::from(q),
            p: Vector2::from(p),
        }
    }

    /// Builds a state from joint velocities using `p = M(q2) q_dot`.
    pub fn from_velocity(params: &RobotParams, q: [f64; 2], q_dot: [f64; 2]) -> Self {
        let q = Vector2::from(q);
        let p = params.inertia(q[1]) * Vector2::from(q_dot);
        Self { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub q_dot: Vector2<f64>,
    pub p_dot: Vector2<f64>,
}

impl StateDerivative {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q_dot[0], self.q_dot[1], self.p_dot[0], self.p_dot[1]]
    }

    pub fn max_abs_diff(&self, other: &StateDerivative) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Constant input map `G = [1, 0]'` and its annihilator `G_perp = [0, 1]`.
pub struct InputMap;

impl InputMap {
    pub const G: Vector2<f64> = Vector2::new(1.0, 0.0);
    pub const G_PERP: Vector2<f64> = Vector2::new(0.0, 1.0);
}
