//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// One RK4 step of `x' = rhs(t, x)`. Fails if `rhs` fails at any stage or
/// if the result contains NaN/Inf.
pub fn step_rk4<F>(mut rhs: F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    debug_assert!(dt > 0.0);
    let n = x.len();
    let half = 0.5 * dt;
    let shifted =
        |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };

    let k1 = rhs(t, x)?;
    let k2 = rhs(t + half, &shifted(&k1, half))?;
    let k3 = rhs(t + half, &shifted(&k2, half))?;
    let k4 = rhs(t + dt, &shifted(&k3, dt))?;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: t + dt });
    }
    Ok(out)
}
