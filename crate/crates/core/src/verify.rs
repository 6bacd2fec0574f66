//! Numeric checks of the design identities, the stability region and the
//! shaped equilibrium.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::IdaPbc;
use crate::error::{Error, Result};
use crate::model::State;
use crate::sim::closed_loop_rhs_direct;

/// Tolerance for identities checked with analytic derivatives.
pub const TOL_ANALYTIC: f64 = 1e-8;
/// Tolerance for identities backed by finite differences.
pub const TOL_FINITE_DIFF: f64 = 1e-5;
/// Tolerance for exact algebraic identities.
pub const TOL_EXACT: f64 = 1e-10;
/// Tolerance for the closed-loop equivalence check.
pub const TOL_EQUIVALENCE: f64 = 1e-9;

/// Outcome of one check. For inequality checks `max_abs_residual` is the
/// size of the violation (zero when the inequality holds).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub name: String,
    pub grid: String,
    pub max_abs_residual: f64,
    pub argmax: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn new(
        name: impl Into<String>,
        grid: impl Into<String>,
        max_abs_residual: f64,
        argmax: Vec<f64>,
        tol: f64,
    ) -> Self {
        Self {
            name: name.into(),
            grid: grid.into(),
            max_abs_residual,
            argmax,
            tol,
            pass: max_abs_residual <= tol,
        }
    }
}

/// `n` evenly spaced points including both ends.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Tracks the largest absolute value seen and where.
#[derive(Debug, Clone, Default)]
struct MaxTracker {
    value: f64,
    at: Vec<f64>,
}

impl MaxTracker {
    fn push(&mut self, v: f64, at: &[f64]) {
        let a = v.abs();
        // NaN must not hide behind a finite maximum
        if a > self.value || (a.is_nan() && !self.value.is_nan()) || self.at.is_empty() {
            self.value = a;
            self.at = at.to_vec();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivatives {
    Analytic,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticOptions {
    pub derivatives: Derivatives,
    /// Added to `psi3` before evaluating the residual (detector test hook).
    pub psi3_offset: f64,
}

impl Default for KineticOptions {
    fn default() -> Self {
        Self {
            derivatives: Derivatives::Analytic,
            psi3_offset: 0.0,
        }
    }
}

/// Entries (1,1), (1,2), (2,2) of the kinetic matching residual at one point.
pub fn kinetic_residual_entries(ctl: &IdaPbc, q2: f64, opts: &KineticOptions) -> [f64; 3] {
    let mut psi = ctl.psi_matrix(q2);
    psi.psi3 += opts.psi3_offset;
    let (dpsi, md_d) = match opts.derivatives {
        Derivatives::Analytic => (ctl.psi_derivative(q2), ctl.desired_inertia_derivative(q2)),
        Derivatives::FiniteDifference(h) => (
            ctl.psi_derivative_fd(q2, h),
            (ctl.desired_inertia(q2 + h) - ctl.desired_inertia(q2 - h)) / (2.0 * h),
        ),
    };
    let alpha = ctl.alpha_with(q2, &dpsi);
    let m_d = ctl.params.inertia_derivative(q2);
    let psi_m = psi.matrix();
    let r = -psi_m * m_d * psi_m.transpose() + psi.psi4 * md_d
        - Matrix2::new(2.0 * alpha[0], alpha[1], alpha[1], 0.0);
    [r[(0, 0)], r[(0, 1)], r[(1, 1)]]
}

/// Max entrywise residual of the kinetic matching equation over `q2_grid`,
/// followed by the three scalar entries reported separately.
pub fn kinetic_matching_residual(
    ctl: &IdaPbc,
    q2_grid: &[f64],
    opts: &KineticOptions,
) -> (ResidualReport, [ResidualReport; 3]) {
    let mut all = MaxTracker::default();
    let mut parts: [MaxTracker; 3] = Default::default();
    for &q2 in q2_grid {
        let e = kinetic_residual_entries(ctl, q2, opts);
        for (tracker, v) in parts.iter_mut().zip(e) {
            tracker.push(v, &[q2]);
            all.push(v, &[q2]);
        }
    }
    let (name, tol) = match opts.derivatives {
        Derivatives::Analytic => ("kinetic_matching", TOL_ANALYTIC),
        Derivatives::FiniteDifference(_) => ("kinetic_matching_fd", TOL_FINITE_DIFF),
    };
    let grid = grid_label(q2_grid);
    let names = ["al1", "al2", "ode"];
    let scalar = std::array::from_fn(|i| {
        ResidualReport::new(
            format!("{name}.{}", names[i]),
            grid.clone(),
            parts[i].value,
            parts[i].at.clone(),
            tol,
        )
    });
    (
        ResidualReport::new(name, grid, all.value, all.at, tol),
        scalar,
    )
}

/// Residual of `psi3' = -tan(q2) psi3 - 2 p2/(p3 psi40) sin(q2) psi3^2`.
pub fn riccati_residual(ctl: &IdaPbc, q2_grid: &[f64]) -> ResidualReport {
    let beta = ctl.params.p2 / (ctl.params.p3 * ctl.gains.psi40);
    let mut m = MaxTracker::default();
    for &q2 in q2_grid {
        let psi3 = ctl.psi3(q2);
        let r = ctl.psi3_derivative(q2) + q2.tan() * psi3 + 2.0 * beta * q2.sin() * psi3 * psi3;
        m.push(r, &[q2]);
    }
    ResidualReport::new("riccati", grid_label(q2_grid), m.value, m.at, TOL_ANALYTIC)
}

/// `max |-p5 sin q2 - psi3 dVd/dq1 - psi4 dVd/dq2|` over the planar grid.
pub fn potential_matching_residual(
    ctl: &IdaPbc,
    q1_grid: &[f64],
    q2_grid: &[f64],
) -> ResidualReport {
    potential_matching_residual_with(ctl, q1_grid, q2_grid, |q| ctl.shaped_potential_gradient(q))
}

/// Same as [`potential_matching_residual`] with a caller-supplied gradient.
pub fn potential_matching_residual_with(
    ctl: &IdaPbc,
    q1_grid: &[f64],
    q2_grid: &[f64],
    grad: impl Fn(&Vector2<f64>) -> Vector2<f64>,
) -> ResidualReport {
    let mut m = MaxTracker::default();
    for &q2 in q2_grid {
        let psi = ctl.psi_matrix(q2);
        for &q1 in q1_grid {
            let g = grad(&Vector2::new(q1, q2));
            let r = -ctl.params.p5 * q2.sin() - psi.psi3 * g[0] - psi.psi4 * g[1];
            m.push(r, &[q1, q2]);
        }
    }
    let grid = format!(
        "{}x{} q1 in [{}, {}], q2 in [{}, {}]",
        q1_grid.len(),
        q2_grid.len(),
        q1_grid.first().unwrap_or(&f64::NAN),
        q1_grid.last().unwrap_or(&f64::NAN),
        q2_grid.first().unwrap_or(&f64::NAN),
        q2_grid.last().unwrap_or(&f64::NAN),
    );
    ResidualReport::new("potential_matching", grid, m.value, m.at, TOL_EXACT)
}

/// The arccos argument of the region formula.
pub fn region_argument(ctl: &IdaPbc) -> f64 {
    let p = &ctl.params;
    let g = &ctl.gains;
    p.p4 * (g.psi40 * g.k1 + p.p2 / p.p3) / (p.p3 + p.p2 * p.p4 / p.p3)
}

/// Half-width `rho` of the interval `|q2| < rho` on which `d4 > 0`.
pub fn region_rho(ctl: &IdaPbc) -> Result<f64> {
    let argument = region_argument(ctl);
    if !(0.0..1.0).contains(&argument) {
        return Err(Error::EmptyRegion { argument });
    }
    Ok(argument.sqrt().acos())
}

/// Brute-force estimate of `rho`: the midpoint of the first of `cells`
/// uniform cells on `[0, pi/2]` across which `d4` stops being positive.
/// Returns `0` if `d4(0) <= 0`.
pub fn region_rho_scan(ctl: &IdaPbc, cells: usize) -> f64 {
    let h = FRAC_PI_2 / cells as f64;
    let d4 = |q2: f64| ctl.desired_inertia(q2)[(1, 1)];
    if d4(0.0) <= 0.0 {
        return 0.0;
    }
    for i in 1..=cells {
        let q2 = i as f64 * h;
        if d4(q2) <= 0.0 {
            return q2 - 0.5 * h;
        }
    }
    FRAC_PI_2
}

/// Formula against scan; the residual is their distance, tolerated up to one cell.
pub fn region_check(ctl: &IdaPbc, cells: usize) -> ResidualReport {
    let h = FRAC_PI_2 / cells as f64;
    let scan = region_rho_scan(ctl, cells);
    let (residual, at) = match region_rho(ctl) {
        Ok(rho) => ((rho - scan).abs(), vec![rho]),
        Err(_) => (f64::INFINITY, vec![]),
    };
    ResidualReport::new(
        "region_rho",
        format!("{cells} cells on [0, pi/2]"),
        residual,
        at,
        h,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefinitenessReport {
    /// Largest grid point `q` such that `M_d` is positive definite on `[-q, q]`.
    pub pd_endpoint: f64,
    pub rho: Option<f64>,
    pub cell: f64,
    pub eigenvalues_at_origin: [f64; 2],
    /// Whether the positive definite interval lies inside `|q2| < rho`.
    pub within_rho: bool,
}

fn sym_eigenvalues(m: &Matrix2<f64>) -> [f64; 2] {
    let e = m.symmetric_eigenvalues();
    let (a, b) = (e[0], e[1]);
    if a <= b {
        [a, b]
    } else {
        [b, a]
    }
}

fn is_pd(ctl: &IdaPbc, q2: f64) -> bool {
    let md = ctl.desired_inertia(q2);
    md[(0, 0)] > 0.0 && md.determinant() > 0.0
}

/// Scans `d1 > 0`, `det M_d > 0` over `n` points of `[0, pi/2)`; the
/// matrix is even in `q2` so the interval is symmetric.
pub fn md_definiteness_scan(ctl: &IdaPbc, n: usize) -> DefinitenessReport {
    let cell = FRAC_PI_2 / n as f64;
    let mut pd_endpoint = 0.0;
    if is_pd(ctl, 0.0) {
        for i in 1..n {
            let q2 = i as f64 * cell;
            if !is_pd(ctl, q2) {
                break;
            }
            pd_endpoint = q2;
        }
    }
    let rho = region_rho(ctl).ok();
    DefinitenessReport {
        pd_endpoint,
        rho,
        cell,
        eigenvalues_at_origin: sym_eigenvalues(&ctl.desired_inertia(0.0)),
        within_rho: rho.is_some_and(|r| pd_endpoint <= r + cell),
    }
}

/// Violation form of the definiteness scan: infinite if `M_d(0)` is not
/// positive definite, otherwise how far the interval pokes out of `rho`.
pub fn md_definiteness_check(ctl: &IdaPbc, n: usize) -> ResidualReport {
    let r = md_definiteness_scan(ctl, n);
    let violation = match r.rho {
        Some(rho) if r.eigenvalues_at_origin[0] > 0.0 => (r.pd_endpoint - rho).max(0.0),
        _ => f64::INFINITY,
    };
    ResidualReport::new(
        "md_definiteness",
        format!("{n} points on [0, pi/2)"),
        violation,
        vec![r.pd_endpoint],
        r.cell,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianReport {
    pub gradient_at_origin: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    pub min_eigenvalue: f64,
    /// Max entrywise difference to a finite-difference Hessian of `V_d`.
    pub fd_residual: f64,
}

/// Central second differences of `V_d` at `q`.
pub fn shaped_potential_hessian_fd(ctl: &IdaPbc, q: &Vector2<f64>, h: f64) -> Matrix2<f64> {
    let v = |dx: f64, dy: f64| ctl.shaped_potential(&Vector2::new(q[0] + dx, q[1] + dy));
    let h2 = h * h;
    let v0 = v(0.0, 0.0);
    let xx = (v(h, 0.0) - 2.0 * v0 + v(-h, 0.0)) / h2;
    let yy = (v(0.0, h) - 2.0 * v0 + v(0.0, -h)) / h2;
    let xy = (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4.0 * h2);
    Matrix2::new(xx, xy, xy, yy)
}

pub fn hessian_vd_check(ctl: &IdaPbc) -> HessianReport {
    let origin = Vector2::zeros();
    let g = ctl.shaped_potential_gradient(&origin);
    let hess = ctl.shaped_potential_hessian(&origin);
    let fd = shaped_potential_hessian_fd(ctl, &origin, 1e-4);
    HessianReport {
        gradient_at_origin: [g[0], g[1]],
        hessian: [[hess[(0, 0)], hess[(0, 1)]], [hess[(1, 0)], hess[(1, 1)]]],
        min_eigenvalue: sym_eigenvalues(&hess)[0],
        fd_residual: (hess - fd).abs().max(),
    }
}

/// Residual `max(|grad V_d(0)|, |H - H_fd|)`, infinite if the Hessian is not positive definite.
pub fn hessian_check(ctl: &IdaPbc) -> ResidualReport {
    let r = hessian_vd_check(ctl);
    let residual = if r.min_eigenvalue > 0.0 {
        r.fd_residual
            .max(r.gradient_at_origin[0].abs())
            .max(r.gradient_at_origin[1].abs())
    } else {
        f64::INFINITY
    };
    ResidualReport::new(
        "hessian_vd",
        "q* = [0, 0]",
        residual,
        vec![r.min_eigenvalue],
        TOL_FINITE_DIFF,
    )
}

/// Random states with `q1, qdot in [-1, 1]` and `q2` inside 95% of the
/// positive definite interval.
pub fn sample_in_region(ctl: &IdaPbc, n: usize, seed: u64) -> Vec<State> {
    let half = 0.95 * md_definiteness_scan(ctl, 1000).pd_endpoint;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q1 = rng.random_range(-1.0..=1.0);
            let q2 = if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            };
            let qd = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            State::from_velocity(&ctl.params, [q1, q2], qd)
        })
        .collect()
}

/// Plant plus control law against the directly evaluated target closed loop.
pub fn closed_loop_equivalence(ctl: &IdaPbc, n_samples: usize, seed: u64) -> ResidualReport {
    closed_loop_equivalence_with(ctl, n_samples, seed, false)
}

/// With `zero_alpha` the control law is evaluated with `J2 = 0`.
pub fn closed_loop_equivalence_with(
    ctl: &IdaPbc,
    n_samples: usize,
    seed: u64,
    zero_alpha: bool,
) -> ResidualReport {
    let mut m = MaxTracker::default();
    for s in sample_in_region(ctl, n_samples, seed) {
        let at = [s.q[0], s.q[1], s.p[0], s.p[1]];
        let r = ctl.shaped_energy(&s).and_then(|mut e| {
            if zero_alpha {
                e.alpha = Vector2::zeros();
                e.j2_scalar = 0.0;
            }
            let u = ctl.control_law_with(&s, &e);
            let composed = ctl.params.open_loop_rhs(&s, u, 0.0);
            Ok(closed_loop_rhs_direct(ctl, &s)?.max_abs_diff(&composed))
        });
        m.push(r.unwrap_or(f64::INFINITY), &at);
    }
    ResidualReport::new(
        "closed_loop_equivalence",
        format!("{n_samples} random states, seed {seed}"),
        m.value,
        m.at,
        TOL_EQUIVALENCE,
    )
}

/// Grid and sample sizes of the full suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub scalar_points: usize,
    pub planar_points: usize,
    pub region_cells: usize,
    pub samples: usize,
    pub seed: u64,
    pub psi3_offset: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            scalar_points: 1000,
            planar_points: 100,
            region_cells: 1_000_000,
            samples: 1000,
            seed: 7,
            psi3_offset: 0.0,
        }
    }
}

/// The seven design checks run by `verify`.
pub fn run_suite(ctl: &IdaPbc, opts: &SuiteOptions) -> Vec<ResidualReport> {
    let q2_grid = linspace(-1.5, 1.5, opts.scalar_points);
    let kin = KineticOptions {
        derivatives: Derivatives::Analytic,
        psi3_offset: opts.psi3_offset,
    };
    vec![
        kinetic_matching_residual(ctl, &q2_grid, &kin).0,
        riccati_residual(ctl, &q2_grid),
        potential_matching_residual(
            ctl,
            &linspace(-3.0, 3.0, opts.planar_points),
            &linspace(-1.5, 1.5, opts.planar_points),
        ),
        closed_loop_equivalence(ctl, opts.samples, opts.seed),
        region_check(ctl, opts.region_cells),
        md_definiteness_check(ctl, opts.scalar_points),
        hessian_check(ctl),
    ]
}

fn grid_label(g: &[f64]) -> String {
    match (g.first(), g.last()) {
        (Some(a), Some(b)) => format!("{} points on [{a}, {b}]", g.len()),
        _ => "empty".to_string(),
    }
}

/// Constants of the prior-work ODE
/// `k1 m22' = -sin(2 q2) m22^2 - 4 m22 + 2 k1 / cos^2 q2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleSpec {
    pub frak_k1: f64,
    pub frak_k2: f64,
    pub b: f64,
}

impl CounterexampleSpec {
    pub fn new(frak_k1: f64, frak_k2: f64, b: f64) -> Result<Self> {
        for (name, v) in [("frak_k1", frak_k1), ("frak_k2", frak_k2), ("b", b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(Self {
            frak_k1,
            frak_k2,
            b,
        })
    }

    /// The claimed closed-form solution.
    pub fn claimed_m22(&self, q2: f64) -> f64 {
        let (s, c) = q2.sin_cos();
        2.0 * self.frak_k1 / (self.b * self.b * c * c)
            + self.frak_k1 / (self.frak_k2 * self.frak_k2 + s * s)
    }

    pub fn claimed_m22_derivative(&self, q2: f64) -> f64 {
        let (s, c) = q2.sin_cos();
        let k = self.frak_k1;
        let den = self.frak_k2 * self.frak_k2 + s * s;
        4.0 * k * s / (self.b * self.b * c * c * c) - 2.0 * k * s * c / (den * den)
    }

    /// `R = k1 m22' + sin(2 q2) m22^2 + 4 m22 - 2 k1 / cos^2 q2`.
    pub fn residual(&self, q2: f64, m22: f64, m22_d: f64) -> f64 {
        let c = q2.cos();
        self.frak_k1 * m22_d + (2.0 * q2).sin() * m22 * m22 + 4.0 * m22
            - 2.0 * self.frak_k1 / (c * c)
    }

    /// `m22'` according to the ODE.
    pub fn ode_rhs(&self, q2: f64, m22: f64) -> f64 {
        let c = q2.cos();
        (-(2.0 * q2).sin() * m22 * m22 - 4.0 * m22 + 2.0 * self.frak_k1 / (c * c)) / self.frak_k1
    }
}

/// Max `|R|` of the claimed solution over `q2_grid`.
pub fn remark2_residual(spec: &CounterexampleSpec, q2_grid: &[f64]) -> ResidualReport {
    let mut m = MaxTracker::default();
    for &q2 in q2_grid {
        let r = spec.residual(q2, spec.claimed_m22(q2), spec.claimed_m22_derivative(q2));
        m.push(r, &[q2]);
    }
    // a claim of non-vanishing: the tolerance is a floor, not a ceiling
    let mut report = ResidualReport::new("remark2", grid_label(q2_grid), m.value, m.at, 1e-2);
    report.pass = report.max_abs_residual > report.tol;
    report
}

/// Feeds the checker a numerically integrated solution of the ODE through
/// `m22(0) = m0` on `[-half_width, half_width]` (RK4, `2 n` steps) with
/// five-point derivatives; a sound checker reports a tiny residual.
pub fn remark2_soundness(
    spec: &CounterexampleSpec,
    half_width: f64,
    n: usize,
    m0: f64,
) -> Result<ResidualReport> {
    let h = half_width / n as f64;
    let integrate = |dir: f64| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = vec![m0];
        out.push(m0);
        // march in s = |q2| with q2 = dir * s
        for i in 0..n {
            x = crate::integrator::step_rk4(
                |s, x| Ok(vec![dir * spec.ode_rhs(dir * s, x[0])]),
                i as f64 * h,
                &x,
                h,
            )?;
            out.push(x[0]);
        }
        Ok(out)
    };
    let fwd = integrate(1.0)?;
    let bwd = integrate(-1.0)?;
    // values on q2 = -n h .. n h
    let values: Vec<f64> = bwd
        .iter()
        .rev()
        .chain(fwd.iter().skip(1))
        .copied()
        .collect();
    let q = |i: usize| (i as f64 - n as f64) * h;

    let mut m = MaxTracker::default();
    for i in 2..values.len() - 2 {
        let d = (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2])
            / (12.0 * h);
        m.push(spec.residual(q(i), values[i], d), &[q(i)]);
    }
    Ok(ResidualReport::new(
        "remark2_soundness",
        format!(
            "{} points on [{}, {}]",
            values.len() - 4,
            -half_width,
            half_width
        ),
        m.value,
        m.at,
        1e-6,
    ))
}
