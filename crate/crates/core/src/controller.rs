//! Total-energy-shaping IDA-PBC controller for the rotary inverted pendulum.
//!
//! The closed loop is shaped into a port-Hamiltonian system with
//! `H_d = 1/2 p' M_d^-1(q2) p + V_d(q)`. With `Psi = M_d M^-1`, the design fixes
//!
//! * `psi4 = -psi40` (constant),
//! * `psi3 = cos q2 / (k1 + p2/(p3 psi40) sin^2 q2)`, the closed-form solution of
//!   the Riccati equation left over from kinetic matching,
//! * `d1 = k2`, with `psi1`, `psi2` following from `Psi M = M_d`,
//! * `alpha` (the free entries of `J2`) absorbing the remaining kinetic terms.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RobotParams, State};

/// Free design constants of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub psi40: f64,
    pub k1: f64,
    pub k2: f64,
    pub kappa: f64,
    pub kv: f64,
}

impl ControllerGains {
    /// Checks positivity of every gain and `d4(0) = p3/k1 - p4 psi40 > 0`.
    pub fn validate(&self, params: &RobotParams) -> Result<()> {
        let entries = [
            ("psi40", self.psi40),
            ("k1", self.k1),
            ("k2", self.k2),
            ("kappa", self.kappa),
            ("kv", self.kv),
        ];
        for (name, v) in entries {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let d4_0 = params.p3 / self.k1 - params.p4 * self.psi40;
        if d4_0 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "k1",
                reason: format!("d4(0) = p3/k1 - p4*psi40 must be > 0, got {d4_0}"),
            });
        }
        Ok(())
    }
}

/// `Psi = M_d M^-1` evaluated at one `q2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiMatrix {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub psi4: f64,
}

impl PsiMatrix {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.psi1, self.psi2, self.psi3, self.psi4)
    }
}

/// Everything the shaped closed loop needs at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedEnergy {
    pub md: Matrix2<f64>,
    pub vd: f64,
    pub grad_vd: Vector2<f64>,
    /// `p_tilde = M_d^-1 p`, also `dH_d/dp`.
    pub p_tilde: Vector2<f64>,
    pub alpha: Vector2<f64>,
    /// The (1,2) entry `p_tilde' alpha` of the skew-symmetric `J2`.
    pub j2_scalar: f64,
}

impl ShapedEnergy {
    pub fn j2(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, self.j2_scalar, -self.j2_scalar, 0.0)
    }

    pub fn hd(&self) -> f64 {
        0.5 * self.p_tilde.dot(&(self.md * self.p_tilde)) + self.vd
    }
}

/// Controller bound to a plant model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdaPbc {
    pub params: RobotParams,
    pub gains: ControllerGains,
}

/// Intermediate scalars shared by the closed-form expressions.
struct Trig {
    s: f64,
    c: f64,
    /// `k1 + beta sin^2 q2`
    den: f64,
    /// derivative of `den`
    den_d: f64,
}

impl IdaPbc {
    pub fn new(params: RobotParams, gains: ControllerGains) -> Result<Self> {
        gains.validate(&params)?;
        Ok(Self { params, gains })
    }

    /// Builds the controller without checking the gain invariants; used by
    /// sweeps that probe invalid combinations on purpose.
    pub fn new_unchecked(params: RobotParams, gains: ControllerGains) -> Self {
        Self { params, gains }
    }

    /// `beta = p2 / (p3 psi40)`
    fn beta(&self) -> f64 {
        self.params.p2 / (self.params.p3 * self.gains.psi40)
    }

    fn trig(&self, q2: f64) -> Trig {
        let (s, c) = q2.sin_cos();
        let beta = self.beta();
        Trig {
            s,
            c,
            den: self.gains.k1 + beta * s * s,
            den_d: 2.0 * beta * s * c,
        }
    }

    pub fn psi3(&self, q2: f64) -> f64 {
        let t = self.trig(q2);
        t.c / t.den
    }

    pub fn psi3_derivative(&self, q2: f64) -> f64 {
        let t = self.trig(q2);
        (-t.s * t.den - t.c * t.den_d) / (t.den * t.den)
    }

    /// Shaped inertia `M_d(q2)`.
    pub fn desired_inertia(&self, q2: f64) -> Matrix2<f64> {
        let p = &self.params;
        let psi40 = self.gains.psi40;
        let t = self.trig(q2);
        let m11 = p.p1 + p.p2 * t.s * t.s;
        let d2 = t.c * m11 / t.den - p.p3 * psi40 * t.c;
        let d4 = p.p3 * t.c * t.c / t.den - p.p4 * psi40;
        Matrix2::new(self.gains.k2, d2, d2, d4)
    }

    pub fn desired_inertia_derivative(&self, q2: f64) -> Matrix2<f64> {
        let p = &self.params;
        let psi40 = self.gains.psi40;
        let t = self.trig(q2);
        let m11 = p.p1 + p.p2 * t.s * t.s;
        let m11_d = 2.0 * p.p2 * t.s * t.c;
        let den2 = t.den * t.den;
        let d2_d =
            (-t.s * m11 + t.c * m11_d) / t.den - t.c * m11 * t.den_d / den2 + p.p3 * psi40 * t.s;
        let d4_d = -2.0 * p.p3 * t.s * t.c / t.den - p.p3 * t.c * t.c * t.den_d / den2;
        Matrix2::new(0.0, d2_d, d2_d, d4_d)
    }

    pub fn psi_matrix(&self, q2: f64) -> PsiMatrix {
        let p = &self.params;
        let (s, c) = q2.sin_cos();
        let md = self.desired_inertia(q2);
        let (d1, d2) = (md[(0, 0)], md[(0, 1)]);
        let m11 = p.p1 + p.p2 * s * s;
        let det = p.inertia_det(q2);
        PsiMatrix {
            psi1: (p.p4 * d1 - p.p3 * c * d2) / det,
            psi2: (-p.p3 * c * d1 + m11 * d2) / det,
            psi3: self.psi3(q2),
            psi4: -self.gains.psi40,
        }
    }

    /// Analytic `d psi_i / d q2`, returned in matrix layout.
    pub fn psi_derivative(&self, q2: f64) -> PsiMatrix {
        let p = &self.params;
        let (s, c) = q2.sin_cos();
        let md = self.desired_inertia(q2);
        let md_d = self.desired_inertia_derivative(q2);
        let (d1, d2, d2_d) = (md[(0, 0)], md[(0, 1)], md_d[(0, 1)]);
        let m11 = p.p1 + p.p2 * s * s;
        let m11_d = 2.0 * p.p2 * s * c;
        let det = p.inertia_det(q2);
        let det_d = m11_d * p.p4 + 2.0 * p.p3 * p.p3 * c * s;

        let n1 = p.p4 * d1 - p.p3 * c * d2;
        let n1_d = p.p3 * s * d2 - p.p3 * c * d2_d;
        let n2 = -p.p3 * c * d1 + m11 * d2;
        let n2_d = p.p3 * s * d1 + m11_d * d2 + m11 * d2_d;
        let det2 = det * det;
        PsiMatrix {
            psi1: (n1_d * det - n1 * det_d) / det2,
            psi2: (n2_d * det - n2 * det_d) / det2,
            psi3: self.psi3_derivative(q2),
            psi4: 0.0,
        }
    }

    /// Central-difference `d psi / d q2`; cross-check for [`Self::psi_derivative`].
    pub fn psi_derivative_fd(&self, q2: f64, h: f64) -> PsiMatrix {
        let a = self.psi_matrix(q2 + h);
        let b = self.psi_matrix(q2 - h);
        PsiMatrix {
            psi1: (a.psi1 - b.psi1) / (2.0 * h),
            psi2: (a.psi2 - b.psi2) / (2.0 * h),
            psi3: (a.psi3 - b.psi3) / (2.0 * h),
            psi4: (a.psi4 - b.psi4) / (2.0 * h),
        }
    }

    /// Entries of `J2`, from the closed-form expressions in `psi` and `psi'`.
    pub fn alpha(&self, q2: f64) -> Vector2<f64> {
        self.alpha_with(q2, &self.psi_derivative(q2))
    }

    /// Same as [`Self::alpha`] with caller-supplied `psi'` (e.g. finite differences).
    pub fn alpha_with(&self, q2: f64, dpsi: &PsiMatrix) -> Vector2<f64> {
        let p = &self.params;
        let (s, c) = q2.sin_cos();
        let PsiMatrix {
            psi1,
            psi2,
            psi3,
            psi4,
        } = self.psi_matrix(q2);
        let m11 = p.p1 + p.p2 * s * s;
        let (dpsi1, dpsi2) = (dpsi.psi1, dpsi.psi2);

        // the closed form gives 2*alpha1
        let two_alpha1 =
            -2.0 * p.p2 * psi1 * psi1 * s * c + 2.0 * p.p3 * psi1 * psi2 * s + psi4 * m11 * dpsi1
                - p.p3 * psi4 * psi2 * s
                + 2.0 * p.p2 * psi4 * psi1 * s * c
                + p.p3 * psi4 * c * dpsi2;
        let alpha2 = p.p3 * psi2 * psi3 * s - 2.0 * p.p2 * psi1 * psi3 * s * c
            + p.p3 * psi1 * psi4 * s
            + p.p3 * psi4 * c * dpsi1
            + p.p4 * psi4 * dpsi2
            - p.p3 * psi4 * psi1 * s;
        Vector2::new(0.5 * two_alpha1, alpha2)
    }

    /// `alpha` solved from the two free kinetic-matching equations, using
    /// `dM_d/dq2` in place of the expanded `psi'` terms.
    pub fn alpha_from_matching(&self, q2: f64) -> Vector2<f64> {
        let p = &self.params;
        let (s, c) = q2.sin_cos();
        let PsiMatrix {
            psi1,
            psi2,
            psi3,
            psi4,
        } = self.psi_matrix(q2);
        let md_d = self.desired_inertia_derivative(q2);
        let two_alpha1 =
            2.0 * p.p3 * psi1 * psi2 * s - 2.0 * p.p2 * psi1 * psi1 * s * c + psi4 * md_d[(0, 0)];
        let alpha2 = p.p3 * s * (psi2 * psi3 + psi1 * psi4) - 2.0 * p.p2 * psi1 * psi3 * s * c
            + psi4 * md_d[(0, 1)];
        Vector2::new(0.5 * two_alpha1, alpha2)
    }

    /// Argument of the shaped potential, `z = q1 + sqrt(p3/(k1 p2 psi40)) atan(sqrt(p2/(k1 p3 psi40)) sin q2)`.
    pub fn potential_coordinate(&self, q: &Vector2<f64>) -> f64 {
        let p = &self.params;
        let ControllerGains { psi40, k1, .. } = self.gains;
        let outer = (p.p3 / (k1 * p.p2 * psi40)).sqrt();
        let inner = (p.p2 / (k1 * p.p3 * psi40)).sqrt();
        q[0] + outer * (inner * q[1].sin()).atan()
    }

    pub fn shaped_potential(&self, q: &Vector2<f64>) -> f64 {
        let z = self.potential_coordinate(q);
        0.5 * self.gains.kappa * z * z - self.params.p5 / self.gains.psi40 * q[1].cos()
    }

    /// `dV_d/dq`; uses `dz/dq2 = psi3 / psi40`.
    pub fn shaped_potential_gradient(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let ControllerGains { psi40, kappa, .. } = self.gains;
        let kz = kappa * self.potential_coordinate(q);
        Vector2::new(
            kz,
            kz * self.psi3(q[1]) / psi40 + self.params.p5 / psi40 * q[1].sin(),
        )
    }

    pub fn shaped_potential_hessian(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let ControllerGains { psi40, kappa, .. } = self.gains;
        let z = self.potential_coordinate(q);
        let dz = self.psi3(q[1]) / psi40;
        let dz2 = self.psi3_derivative(q[1]) / psi40;
        Matrix2::new(
            kappa,
            kappa * dz,
            kappa * dz,
            kappa * (dz * dz + z * dz2) + self.params.p5 / psi40 * q[1].cos(),
        )
    }

    /// Returns `M_d(q2)` if it is positive definite, `DefinitenessLost` otherwise.
    pub fn checked_desired_inertia(&self, q2: f64) -> Result<Matrix2<f64>> {
        let md = self.desired_inertia(q2);
        let d1 = md[(0, 0)];
        let det = md.determinant();
        if !(d1 > 0.0 && det > 0.0) {
            return Err(Error::DefinitenessLost { q2, d1, det });
        }
        Ok(md)
    }

    /// `p_tilde = M_d^-1 p`.
    pub fn p_tilde(&self, s: &State) -> Result<Vector2<f64>> {
        let md = self.checked_desired_inertia(s.q[1])?;
        Ok(solve2(&md, &s.p))
    }

    pub fn shaped_energy(&self, s: &State) -> Result<ShapedEnergy> {
        let md = self.checked_desired_inertia(s.q[1])?;
        let p_tilde = solve2(&md, &s.p);
        let alpha = self.alpha(s.q[1]);
        Ok(ShapedEnergy {
            md,
            vd: self.shaped_potential(&s.q),
            grad_vd: self.shaped_potential_gradient(&s.q),
            p_tilde,
            alpha,
            j2_scalar: p_tilde.dot(&alpha),
        })
    }

    pub fn desired_hamiltonian(&self, s: &State) -> Result<f64> {
        Ok(self.shaped_energy(s)?.hd())
    }

    /// `dH_d/dq` given a precomputed [`ShapedEnergy`] at the same state.
    pub fn grad_q_desired_hamiltonian(&self, s: &State, e: &ShapedEnergy) -> Vector2<f64> {
        let md_d = self.desired_inertia_derivative(s.q[1]);
        let kinetic = -0.5 * e.p_tilde.dot(&(md_d * e.p_tilde));
        e.grad_vd + Vector2::new(0.0, kinetic)
    }

    /// Control torque
    /// `u = [dH/dq - M_d M^-1 dH_d/dq + J2 dH_d/dp]_1 - kv [dH_d/dp]_1`.
    pub fn control_law(&self, s: &State) -> Result<f64> {
        let e = self.shaped_energy(s)?;
        Ok(self.control_law_with(s, &e))
    }

    pub fn control_law_with(&self, s: &State, e: &ShapedEnergy) -> f64 {
        let grad_h = self.params.grad_q_hamiltonian(s);
        let grad_hd = self.grad_q_desired_hamiltonian(s, e);
        let psi = self.psi_matrix(s.q[1]).matrix();
        let v = grad_h - psi * grad_hd + e.j2() * e.p_tilde;
        v[0] - self.gains.kv * e.p_tilde[0]
    }
}

/// Solves a 2x2 system by Cramer's rule.
pub(crate) fn solve2(a: &Matrix2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    Vector2::new(
        (a[(1, 1)] * b[0] - a[(0, 1)] * b[1]) / det,
        (a[(0, 0)] * b[1] - a[(1, 0)] * b[0]) / det,
    )
}
