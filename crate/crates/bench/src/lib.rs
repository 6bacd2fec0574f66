//! Fixtures shared by the benchmarks.

use rip_core::{Config, IdaPbc, State};

/// Controller for the built-in default configuration.
pub fn default_controller() -> IdaPbc {
    Config::default().controller()
}

/// A fixed in-region state away from the equilibrium.
pub fn sample_state() -> State {
    State::new([0.3, 0.4], [0.05, -0.02])
}
