//! TOML configuration: parsing, defaults and validation.
//!
//! ```toml
//! [robot]            # either p = [p1, .., p5] or m1, m2, l1, l2, I1, I2, g
//! [controller]       # psi40, k1, k2, kappa, kv
//! [simulation]       # mode, q0, qdot0, dt, t_end
//! [disturbance]      # f = ["1", "q1", ...], theta = [...]
//! [adaptive]         # gamma (scalar or matrix), theta_hat0, enabled
//! [output]           # dir, plots
//! ```
//!
//! Every section is optional; missing values take the documented defaults.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::adaptive::{AdaptationGain, AdaptiveState, DisturbanceSpec};
use crate::controller::{ControllerGains, IdaPbc};
use crate::error::{Error, Result};
use crate::model::{PhysicalParams, RobotParams};
use crate::regressor::RegressorSpec;
use crate::sim::{Mode, Scenario};

/// Link data used when the config has no `[robot]` section.
pub const DEFAULT_PHYSICAL: PhysicalParams = PhysicalParams {
    m1: 5.791,
    m2: 1.7634,
    l1: 0.2886,
    l2: 0.0904,
    i1: 0.1798,
    i2: 0.0072,
    g: 9.81,
};

pub const DEFAULT_PSI40: f64 = 1.0;
pub const DEFAULT_K1: f64 = 0.1;
pub const DEFAULT_K2: f64 = 100.0;
pub const DEFAULT_KAPPA: f64 = 0.004318;
pub const DEFAULT_KV: f64 = 20.49;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 30.0;
pub const DEFAULT_Q0: [f64; 2] = [0.2, 1.0];
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    robot: Option<RawRobot>,
    controller: Option<RawController>,
    simulation: Option<RawSimulation>,
    disturbance: Option<RawDisturbance>,
    adaptive: Option<RawAdaptive>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRobot {
    p: Option<[f64; 5]>,
    m1: Option<f64>,
    m2: Option<f64>,
    l1: Option<f64>,
    l2: Option<f64>,
    #[serde(rename = "I1")]
    i1: Option<f64>,
    #[serde(rename = "I2")]
    i2: Option<f64>,
    g: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    psi40: Option<f64>,
    k1: Option<f64>,
    k2: Option<f64>,
    kappa: Option<f64>,
    kv: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    mode: Option<Mode>,
    q0: Option<[f64; 2]>,
    qdot0: Option<[f64; 2]>,
    dt: Option<f64>,
    t_end: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    f: Vec<String>,
    theta: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGamma {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdaptive {
    gamma: Option<RawGamma>,
    theta_hat0: Option<Vec<f64>>,
    enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    plots: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub mode: Mode,
    pub q0: [f64; 2],
    pub qdot0: [f64; 2],
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

/// Fully validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: RobotParams,
    pub gains: ControllerGains,
    pub simulation: SimulationConfig,
    pub disturbance: Option<DisturbanceSpec>,
    /// Present only when the robust controller is selected.
    pub adaptive: Option<AdaptiveState>,
    pub output: OutputConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Like [`Config::load`] but without the `d4(0) > 0` gain invariant, so
    /// that region queries can report an empty region themselves.
    pub fn load_lenient(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str_lenient(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        resolve(parse_raw(text)?, true)
    }

    pub fn from_toml_str_lenient(text: &str) -> Result<Self> {
        resolve(parse_raw(text)?, false)
    }

    pub fn controller(&self) -> IdaPbc {
        IdaPbc::new_unchecked(self.params, self.gains)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            mode: self.simulation.mode,
            q0: self.simulation.q0,
            qdot0: self.simulation.qdot0,
            t_end: self.simulation.t_end,
            dt: self.simulation.dt,
            controller: self.controller(),
            disturbance: self.disturbance.clone(),
            adaptive: self.adaptive.clone(),
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        resolve(RawConfig::default(), true).expect("built-in defaults are valid")
    }
}

fn parse_raw(text: &str) -> Result<RawConfig> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| Error::config("<toml>", e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        Error::config(key_path(&path, &message), message)
    })
}

/// Appends the offending field to the path for unknown-key errors.
fn key_path(path: &str, message: &str) -> String {
    let unknown = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next());
    match (path, unknown) {
        (".", Some(field)) | ("", Some(field)) => field.to_string(),
        (p, Some(field)) if !p.ends_with(field) => format!("{p}.{field}"),
        (".", None) | ("", None) => "<root>".to_string(),
        (p, _) => p.to_string(),
    }
}

fn check_positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(
            key,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

fn resolve_robot(raw: Option<RawRobot>) -> Result<RobotParams> {
    let Some(r) = raw else {
        return DEFAULT_PHYSICAL
            .to_robot_params()
            .map_err(|e| Error::config("robot", e.to_string()));
    };
    let physical = [r.m1, r.m2, r.l1, r.l2, r.i1, r.i2, r.g];
    let names = ["m1", "m2", "l1", "l2", "I1", "I2", "g"];
    if let Some(p) = r.p {
        if physical.iter().any(Option::is_some) {
            warn!("robot: both p and physical parameters given; using p");
        }
        return RobotParams::new(p).map_err(|e| Error::config(robot_key(&e, "p"), e.to_string()));
    }
    if physical.iter().all(Option::is_none) {
        return Err(Error::config(
            "robot",
            "expected either p or m1, m2, l1, l2, I1, I2, g",
        ));
    }
    let mut values = [0.0; 7];
    for i in 0..7 {
        let key = format!("robot.{}", names[i]);
        let v = physical[i].ok_or_else(|| Error::config(&key, "missing physical parameter"))?;
        values[i] = check_positive(&key, v)?;
    }
    let [m1, m2, l1, l2, i1, i2, g] = values;
    PhysicalParams {
        m1,
        m2,
        l1,
        l2,
        i1,
        i2,
        g,
    }
    .to_robot_params()
    .map_err(|e| Error::config("robot", e.to_string()))
}

fn robot_key(e: &Error, fallback: &str) -> String {
    match e {
        Error::InvalidParameter { name, .. } => format!("robot.{fallback}[{name}]"),
        _ => format!("robot.{fallback}"),
    }
}

fn resolve_gains(
    raw: Option<RawController>,
    params: &RobotParams,
    strict: bool,
) -> Result<ControllerGains> {
    let r = raw.unwrap_or_default();
    let gains = ControllerGains {
        psi40: check_positive("controller.psi40", r.psi40.unwrap_or(DEFAULT_PSI40))?,
        k1: check_positive("controller.k1", r.k1.unwrap_or(DEFAULT_K1))?,
        k2: check_positive("controller.k2", r.k2.unwrap_or(DEFAULT_K2))?,
        kappa: check_positive("controller.kappa", r.kappa.unwrap_or(DEFAULT_KAPPA))?,
        kv: check_positive("controller.kv", r.kv.unwrap_or(DEFAULT_KV))?,
    };
    if !strict {
        return Ok(gains);
    }
    gains.validate(params).map_err(|e| match &e {
        Error::InvalidParameter { name, .. } => {
            Error::config(format!("controller.{name}"), e.to_string())
        }
        _ => Error::config("controller", e.to_string()),
    })?;
    Ok(gains)
}

fn resolve_gamma(raw: Option<RawGamma>, dim: usize) -> Result<AdaptationGain> {
    let gain = match raw.unwrap_or(RawGamma::Scalar(DEFAULT_GAMMA)) {
        RawGamma::Scalar(g) => AdaptationGain::scalar(g, dim),
        RawGamma::Matrix(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::config(
                    "adaptive.gamma",
                    format!("must be a scalar or a {dim}x{dim} matrix"),
                ));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            AdaptationGain::new(DMatrix::from_row_slice(dim, dim, &flat))
        }
    };
    gain.map_err(|e| Error::config("adaptive.gamma", e.to_string()))
}

fn resolve(raw: RawConfig, strict: bool) -> Result<Config> {
    let params = resolve_robot(raw.robot)?;
    let gains = resolve_gains(raw.controller, &params, strict)?;

    let disturbance = match raw.disturbance {
        Some(d) => {
            let regressor = RegressorSpec::parse(&d.f)
                .map_err(|e| Error::config("disturbance.f", e.to_string()))?;
            Some(
                DisturbanceSpec::new(regressor, d.theta)
                    .map_err(|e| Error::config("disturbance.theta", e.to_string()))?,
            )
        }
        None => None,
    };

    let sim = raw.simulation.unwrap_or_default();
    let adaptive_enabled = raw.adaptive.as_ref().and_then(|a| a.enabled);
    let mode = match (sim.mode, &disturbance, adaptive_enabled) {
        (Some(Mode::DisturbedRobust), _, Some(false)) => {
            return Err(Error::config(
                "adaptive.enabled",
                "disturbed_robust mode requires the adaptive controller",
            ))
        }
        (Some(m), _, _) => m,
        (None, Some(_), Some(true)) => Mode::DisturbedRobust,
        (None, Some(_), _) => Mode::DisturbedNominal,
        (None, None, _) => Mode::Nominal,
    };
    if mode != Mode::Nominal && disturbance.is_none() {
        return Err(Error::config(
            "disturbance",
            format!("mode {} needs a [disturbance] section", mode.as_str()),
        ));
    }

    let adaptive = match (mode, &disturbance) {
        (Mode::DisturbedRobust, Some(d)) => {
            let a = raw.adaptive.unwrap_or_default();
            let dim = d.regressor.len();
            let gain = resolve_gamma(a.gamma, dim)?;
            let theta_hat0 = a.theta_hat0.unwrap_or_else(|| vec![0.0; dim]);
            if theta_hat0.len() != dim || theta_hat0.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    "adaptive.theta_hat0",
                    format!("must hold {dim} finite values"),
                ));
            }
            Some(
                AdaptiveState::new(theta_hat0, gain)
                    .map_err(|e| Error::config("adaptive", e.to_string()))?,
            )
        }
        _ => None,
    };

    let dt = check_positive("simulation.dt", sim.dt.unwrap_or(DEFAULT_DT))?;
    let t_end = sim.t_end.unwrap_or(DEFAULT_T_END);
    if !(t_end.is_finite() && t_end >= dt) {
        return Err(Error::config(
            "simulation.t_end",
            format!("must be >= dt ({dt}), got {t_end}"),
        ));
    }
    let q0 = sim.q0.unwrap_or(DEFAULT_Q0);
    let qdot0 = sim.qdot0.unwrap_or([0.0, 0.0]);
    if q0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("simulation.q0", "must be finite"));
    }
    if qdot0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("simulation.qdot0", "must be finite"));
    }

    let out = raw.output.unwrap_or_default();
    Ok(Config {
        params,
        gains,
        simulation: SimulationConfig {
            mode,
            q0,
            qdot0,
            dt,
            t_end,
        },
        disturbance,
        adaptive,
        output: OutputConfig {
            dir: out.dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            plots: out.plots.unwrap_or(false),
        },
    })
}
