use thiserror::Error;

/// Errors produced by the model, controller, simulation and configuration layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The shaped inertia matrix is not positive definite at this configuration.
    #[error("desired inertia lost definiteness at q2 = {q2} (d1 = {d1}, det = {det})")]
    DefinitenessLost { q2: f64, d1: f64, det: f64 },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    /// The arccos argument of the region formula is outside [0, 1).
    #[error("region d4 > 0 is empty: arccos argument {argument} >= 1")]
    EmptyRegion { argument: f64 },

    #[error("parse error at position {position}: expected {expected}")]
    Parse { position: usize, expected: String },

    #[error("unknown variable `{name}` at position {position} (allowed: q1, q2, p1, p2)")]
    UnknownVariable { name: String, position: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Configuration problem; `key` is the dotted path of the offending entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
