//! Closed-loop simulation: plant + controller (+ adaptation) as one ODE.

use std::io::{self, Write};

use log::warn;
use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, AdaptiveState, DisturbanceSpec};
use crate::controller::IdaPbc;
use crate::error::{Error, Result};
use crate::integrator::step_rk4;
use crate::model::{State, StateDerivative};
use crate::verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Undisturbed plant, nominal controller.
    Nominal,
    /// Disturbed plant, nominal controller.
    DisturbedNominal,
    /// Disturbed plant, adaptive robust controller.
    DisturbedRobust,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::DisturbedNominal => "disturbed_nominal",
            Mode::DisturbedRobust => "disturbed_robust",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub q0: [f64; 2],
    /// Initial joint velocities; converted to momenta with `M(q2_0)`.
    pub qdot0: [f64; 2],
    pub t_end: f64,
    pub dt: f64,
    pub controller: IdaPbc,
    pub disturbance: Option<DisturbanceSpec>,
    pub adaptive: Option<AdaptiveState>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(
                "simulation.dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::config(
                "simulation.t_end",
                format!("must be >= dt ({}), got {}", self.dt, self.t_end),
            ));
        }
        if self.q0.iter().chain(&self.qdot0).any(|v| !v.is_finite()) {
            return Err(Error::config(
                "simulation.q0",
                "initial state must be finite",
            ));
        }
        if self.mode != Mode::Nominal && self.disturbance.is_none() {
            return Err(Error::config(
                "disturbance",
                format!("mode {} needs a disturbance block", self.mode.as_str()),
            ));
        }
        if self.mode == Mode::DisturbedRobust {
            let (Some(d), Some(a)) = (&self.disturbance, &self.adaptive) else {
                return Err(Error::config(
                    "adaptive",
                    "disturbed_robust mode needs adaptive settings",
                ));
            };
            if a.theta_hat.len() != d.regressor.len() {
                return Err(Error::config(
                    "adaptive.theta_hat0",
                    format!(
                        "length {} != regressor length {}",
                        a.theta_hat.len(),
                        d.regressor.len()
                    ),
                ));
            }
        }
        match verify::region_rho(&self.controller) {
            Ok(rho) if self.q0[1].abs() >= rho => warn!(
                "initial pendulum angle {} lies outside the d4 > 0 region |q2| < {rho:.4}",
                self.q0[1]
            ),
            Err(e) => warn!("{e}"),
            _ => {}
        }
        Ok(())
    }

    fn estimates_len(&self) -> usize {
        match self.mode {
            Mode::DisturbedRobust => self.adaptive.as_ref().map_or(0, |a| a.theta_hat.len()),
            _ => 0,
        }
    }
}

/// Diagnostics recorded at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub u: f64,
    /// Disturbance acting on the plant.
    pub d: f64,
    /// Estimate `f' theta_hat` (zero unless the robust controller runs).
    pub d_hat: f64,
    pub h: f64,
    pub hd: f64,
    /// `H_d + 1/2 theta_tilde' Gamma theta_tilde` in robust mode, `H_d` otherwise.
    pub v_lyap: f64,
    pub p_tilde1: f64,
    pub theta_hat: Vec<f64>,
    /// Max abs difference between plant+controller and the direct closed-loop form.
    pub matching_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The shaped inertia lost definiteness; the run stopped at `t`.
    RegionExit {
        t: f64,
        q2: f64,
    },
    NonFinite {
        t: f64,
    },
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::RegionExit { .. } => "region_exit",
            RunStatus::NonFinite { .. } => "non_finite",
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub mode: Mode,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Largest forward-difference slope of a recorded quantity.
    pub fn max_slope(&self, f: impl Fn(&TraceRow) -> f64) -> f64 {
        self.rows
            .windows(2)
            .map(|w| (f(&w[1]) - f(&w[0])) / (w[1].t - w[0].t))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_slope(&self, f: impl Fn(&TraceRow) -> f64) -> f64 {
        self.rows
            .windows(2)
            .map(|w| (f(&w[1]) - f(&w[0])) / (w[1].t - w[0].t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_q_inf_norm(&self) -> f64 {
        self.last()
            .map_or(f64::NAN, |r| r.q[0].abs().max(r.q[1].abs()))
    }

    pub fn max_abs_q(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.q[0].abs().max(r.q[1].abs()))
            .fold(0.0, f64::max)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "t", "q1", "q2", "p1", "p2", "u", "d", "d_hat", "H", "Hd", "V_lyap", "ptilde1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let n = self.rows.first().map_or(0, |r| r.theta_hat.len());
        h.extend((1..=n).map(|i| format!("theta_hat_{i}")));
        h
    }

    /// Writes the trace as CSV with 9 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        let mut line = String::new();
        for r in &self.rows {
            line.clear();
            let fixed = [
                r.t, r.q[0], r.q[1], r.p[0], r.p[1], r.u, r.d, r.d_hat, r.h, r.hd, r.v_lyap,
                r.p_tilde1,
            ];
            for (i, v) in fixed.iter().chain(&r.theta_hat).enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format_sig9(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Scientific notation with 9 significant digits; independent of locale.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0.00000000e0"
        return "0.00000000e0".to_string();
    }
    format!("{v:.8e}")
}

/// Right-hand side of the target closed loop
/// `[q; p]' = [[0, M^-1 M_d], [-M_d M^-1, J2 - G kv G']] [dH_d/dq; dH_d/dp]`,
/// evaluated directly rather than through the plant and the control law.
pub fn closed_loop_rhs_direct(controller: &IdaPbc, s: &State) -> Result<StateDerivative> {
    let e = controller.shaped_energy(s)?;
    let m_inv = controller.params.inertia_inverse(s.q[1]);
    let grad_q_hd = controller.grad_q_desired_hamiltonian(s, &e);
    let kv = controller.gains.kv;
    let damping = nalgebra::Matrix2::new(kv, 0.0, 0.0, 0.0);
    let q_dot = m_inv * e.md * e.p_tilde;
    let p_dot = -(e.md * m_inv) * grad_q_hd + (e.j2() - damping) * e.p_tilde;
    Ok(StateDerivative { q_dot, p_dot })
}

/// Plant driven by the nominal control law, undisturbed.
pub fn closed_loop_rhs_composed(controller: &IdaPbc, s: &State) -> Result<StateDerivative> {
    let u = controller.control_law(s)?;
    Ok(controller.params.open_loop_rhs(s, u, 0.0))
}

struct Evaluation {
    derivative: Vec<f64>,
    row: Option<TraceRow>,
}

/// Evaluates the composite field at `x = [q, p, theta_hat]`; with `record`
/// set it also fills a trace row.
fn evaluate(sc: &Scenario, t: f64, x: &[f64], record: bool) -> Result<Evaluation> {
    let ctl = &sc.controller;
    let s = State {
        q: Vector2::new(x[0], x[1]),
        p: Vector2::new(x[2], x[3]),
    };
    let e = ctl.shaped_energy(&s)?;
    let u_nominal = ctl.control_law_with(&s, &e);

    let d = match (&sc.disturbance, sc.mode) {
        (Some(dist), Mode::DisturbedNominal | Mode::DisturbedRobust) => dist.torque(&s),
        _ => 0.0,
    };

    let mut derivative = Vec::with_capacity(x.len());
    let (u, d_hat, theta_hat) = if sc.mode == Mode::DisturbedRobust {
        let dist = sc.disturbance.as_ref().expect("validated");
        let ad = sc.adaptive.as_ref().expect("validated");
        let theta_hat = DVector::from_column_slice(&x[4..]);
        let d_hat = dist.regressor.dot(&s, theta_hat.as_slice());
        let rhs = adaptive::adaptation_rhs(&dist.regressor, &ad.gain, &s, &e.md)?;
        let plant = ctl.params.open_loop_rhs(&s, u_nominal + d_hat, d);
        derivative.extend_from_slice(&plant.as_array());
        derivative.extend(rhs.iter());
        (u_nominal + d_hat, d_hat, Some(theta_hat))
    } else {
        let plant = ctl.params.open_loop_rhs(&s, u_nominal, d);
        derivative.extend_from_slice(&plant.as_array());
        (u_nominal, 0.0, None)
    };

    let row = if record {
        let hd = e.hd();
        let v_lyap = match (&theta_hat, &sc.adaptive, &sc.disturbance) {
            (Some(th), Some(ad), Some(dist)) => {
                let tilde = th - DVector::from_column_slice(&dist.theta);
                adaptive::lyapunov(hd, &tilde, &ad.gain)
            }
            _ => hd,
        };
        let composed = ctl.params.open_loop_rhs(&s, u_nominal, 0.0);
        let matching_residual = closed_loop_rhs_direct(ctl, &s)?.max_abs_diff(&composed);
        Some(TraceRow {
            t,
            q: [s.q[0], s.q[1]],
            p: [s.p[0], s.p[1]],
            u,
            d,
            d_hat,
            h: ctl.params.hamiltonian(&s),
            hd,
            v_lyap,
            p_tilde1: e.p_tilde[0],
            theta_hat: theta_hat.map_or_else(Vec::new, |t| t.as_slice().to_vec()),
            matching_residual,
        })
    } else {
        None
    };
    Ok(Evaluation { derivative, row })
}

/// Integrates the scenario with fixed-step RK4 and records one row per step.
///
/// Returns `Err` only for an invalid scenario. Loss of definiteness or a
/// non-finite state stops the run early; the partial trace is returned with
/// the corresponding [`RunStatus`].
pub fn run(sc: &Scenario) -> Result<Trace> {
    sc.validate()?;
    let s0 = State::from_velocity(&sc.controller.params, sc.q0, sc.qdot0);
    let mut x: Vec<f64> = vec![s0.q[0], s0.q[1], s0.p[0], s0.p[1]];
    if sc.estimates_len() > 0 {
        let ad = sc.adaptive.as_ref().expect("validated");
        x.extend(ad.theta_hat.iter());
    }

    let n_steps = (sc.t_end / sc.dt).round() as usize;
    let mut rows = Vec::with_capacity(n_steps + 1);
    let mut status = RunStatus::Completed;
    let stop = |err: Error, t: f64, x: &[f64]| match err {
        Error::DefinitenessLost { q2, .. } => Ok(RunStatus::RegionExit { t, q2 }),
        Error::NonFiniteState { t } => Ok(RunStatus::NonFinite { t }),
        other => {
            let _ = x;
            Err(other)
        }
    };

    for k in 0..=n_steps {
        let t = k as f64 * sc.dt;
        match evaluate(sc, t, &x, true) {
            Ok(ev) => rows.push(ev.row.expect("recorded")),
            Err(err) => {
                status = stop(err, t, &x)?;
                break;
            }
        }
        if k == n_steps {
            break;
        }
        let step = step_rk4(
            |tt, xx| evaluate(sc, tt, xx, false).map(|ev| ev.derivative),
            t,
            &x,
            sc.dt,
        );
        match step {
            Ok(next) => x = next,
            Err(err) => {
                status = stop(err, t, &x)?;
                break;
            }
        }
    }

    Ok(Trace {
        mode: sc.mode,
        dt: sc.dt,
        rows,
        status,
    })
}
