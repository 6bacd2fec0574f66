//! Rotary inverted pendulum: model, total-energy-shaping controller,
//! adaptive disturbance rejection, simulation and numeric verification.

pub mod adaptive;
pub mod config;
pub mod controller;
pub mod error;
pub mod integrator;
pub mod model;
pub mod regressor;
pub mod sim;
pub mod verify;

pub use adaptive::{AdaptationGain, AdaptiveState, DisturbanceSpec};
pub use config::Config;
pub use controller::{ControllerGains, IdaPbc, PsiMatrix, ShapedEnergy};
pub use error::{Error, Result};
pub use model::{InputMap, PhysicalParams, RobotParams, State, StateDerivative};
pub use regressor::{Expr, RegressorSpec, Var};
pub use sim::{Mode, RunStatus, Scenario, Trace, TraceRow};
pub use verify::{CounterexampleSpec, ResidualReport};
