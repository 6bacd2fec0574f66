use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;

use rip_core::verify::{self, CounterexampleSpec, KineticOptions};
use rip_core::{ControllerGains, IdaPbc, RobotParams, State};

fn synthetic() -> IdaPbc {
    IdaPbc::new(
        RobotParams::new([2.0, 1.0, 1.0, 2.0, 1.0]).unwrap(),
        ControllerGains {
            psi40: 1.0,
            k1: 0.1,
            k2: 100.0,
            kappa: 1.0,
            kv: 1.0,
        },
    )
    .unwrap()
}

/// Random plant parameters with `p1 p4 > p3^2`.
fn arb_params() -> impl Strategy<Value = RobotParams> {
    (
        0.2f64..5.0,
        0.1f64..2.0,
        0.1f64..2.0,
        0.2f64..5.0,
        0.1f64..5.0,
    )
        .prop_filter("p1 p4 > p3^2", |(p1, _, p3, p4, _)| {
            p1 * p4 > 1.05 * p3 * p3
        })
        .prop_map(|(p1, p2, p3, p4, p5)| RobotParams::new([p1, p2, p3, p4, p5]).unwrap())
}

/// Random controller with `M_d(0)` positive definite.
fn arb_controller() -> impl Strategy<Value = IdaPbc> {
    (
        arb_params(),
        0.2f64..3.0,
        0.01f64..0.9,
        1.0f64..200.0,
        1e-3f64..10.0,
        0.1f64..10.0,
    )
        .prop_filter_map(
            "M_d(0) positive definite",
            |(params, psi40, frac, k2, kappa, kv)| {
                // k1 strictly below the bound p3 / (p4 psi40)
                let k1 = frac * params.p3 / (params.p4 * psi40);
                let ctl = IdaPbc::new(
                    params,
                    ControllerGains {
                        psi40,
                        k1,
                        k2,
                        kappa,
                        kv,
                    },
                )
                .ok()?;
                let md = ctl.desired_inertia(0.0);
                (md[(0, 0)] > 0.0 && md.determinant() > 0.0).then_some(ctl)
            },
        )
}

fn eig2(m: &Matrix2<f64>) -> (f64, f64) {
    let tr = m.trace();
    let det = m.determinant();
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

#[test]
fn synthetic_md_at_origin_eigenvalues() {
    let md = synthetic().desired_inertia(0.0);
    assert!((md - Matrix2::new(100.0, 19.0, 19.0, 8.0)).abs().max() < 1e-12);
    let (lo, hi) = eig2(&md);
    // 54 -+ sqrt(46^2 + 19^2)
    let r = (46.0f64 * 46.0 + 19.0 * 19.0).sqrt();
    assert!((lo - (54.0 - r)).abs() < 1e-12 && lo > 0.0);
    assert!((hi - (54.0 + r)).abs() < 1e-12);
}

#[test]
fn synthetic_region_matches_closed_form() {
    let rho = verify::region_rho(&synthetic()).unwrap();
    assert!((rho - (2.2f64 / 3.0).sqrt().acos()).abs() < 1e-15);
    assert!((rho - 0.5427).abs() < 1e-4);
}

#[test]
fn region_formula_against_scan_synthetic() {
    let ctl = synthetic();
    let cells = 1_000_000;
    let scan = verify::region_rho_scan(&ctl, cells);
    let rho = verify::region_rho(&ctl).unwrap();
    assert!((scan - rho).abs() <= std::f64::consts::FRAC_PI_2 / cells as f64);
}

#[test]
fn empty_region_is_reported() {
    let ctl = IdaPbc::new_unchecked(
        RobotParams::new([2.0, 1.0, 1.0, 2.0, 1.0]).unwrap(),
        ControllerGains {
            psi40: 1.0,
            k1: 0.6,
            k2: 100.0,
            kappa: 1.0,
            kv: 1.0,
        },
    );
    assert!(matches!(
        verify::region_rho(&ctl),
        Err(rip_core::Error::EmptyRegion { .. })
    ));
}

#[test]
fn definiteness_interval_within_rho() {
    let ctl = synthetic();
    let r = verify::md_definiteness_scan(&ctl, 1000);
    assert!(r.within_rho);
    assert!(r.pd_endpoint > 0.0);
    // M_d stays positive definite on 0.99 of the interval
    for q2 in verify::linspace(-0.99 * r.pd_endpoint, 0.99 * r.pd_endpoint, 501) {
        let md = ctl.desired_inertia(q2);
        assert!(md[(0, 0)] > 0.0 && md.determinant() > 0.0, "q2 = {q2}");
    }
}

#[test]
fn larger_k2_does_not_shrink_definiteness_interval() {
    let base = synthetic();
    let mut big = base;
    big.gains.k2 *= 10.0;
    let a = verify::md_definiteness_scan(&base, 2000).pd_endpoint;
    let b = verify::md_definiteness_scan(&big, 2000).pd_endpoint;
    assert!(b >= a, "{b} < {a}");
}

#[test]
fn hessian_limits() {
    let mut ctl = synthetic();
    let r = verify::hessian_vd_check(&ctl);
    assert_eq!(r.hessian, [[1.0, 10.0], [10.0, 101.0]]);
    assert!(r.min_eigenvalue > 0.0);
    ctl.gains.kappa = 0.0;
    let h = ctl.shaped_potential_hessian(&Vector2::zeros());
    assert_eq!(h, Matrix2::new(0.0, 0.0, 0.0, 1.0));
    assert_eq!(h.determinant(), 0.0);
}

#[test]
fn kinetic_residual_detects_psi3_perturbation() {
    let ctl = synthetic();
    let grid = verify::linspace(-1.5, 1.5, 1000);
    let clean = verify::kinetic_matching_residual(&ctl, &grid, &KineticOptions::default()).0;
    assert!(clean.pass, "{clean:?}");
    let opts = KineticOptions {
        psi3_offset: 0.01,
        ..Default::default()
    };
    let bad = verify::kinetic_matching_residual(&ctl, &grid, &opts).0;
    assert!(bad.max_abs_residual > 1e-4, "{bad:?}");
}

#[test]
fn kinetic_residual_is_even_in_q2() {
    let ctl = synthetic();
    let opts = KineticOptions::default();
    for q2 in verify::linspace(0.0, 1.5, 200) {
        let a = verify::kinetic_residual_entries(&ctl, q2, &opts);
        let b = verify::kinetic_residual_entries(&ctl, -q2, &opts);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.abs() - y.abs()).abs() < 1e-10);
        }
    }
}

#[test]
fn potential_residual_independent_of_q1_and_sensitive_to_kappa() {
    let ctl = synthetic();
    let q2 = verify::linspace(-1.5, 1.5, 100);
    let r = verify::potential_matching_residual(&ctl, &verify::linspace(-3.0, 3.0, 100), &q2);
    assert!(r.max_abs_residual < 1e-10);
    let r1 = verify::potential_matching_residual(&ctl, &[0.0], &q2);
    let r2 = verify::potential_matching_residual(&ctl, &[2.5], &q2);
    assert!((r1.max_abs_residual - r2.max_abs_residual).abs() < 1e-12);
    let bad = verify::potential_matching_residual_with(&ctl, &[0.5], &q2, |q| {
        let g = ctl.shaped_potential_gradient(q);
        Vector2::new(1.1 * g[0], g[1])
    });
    assert!(bad.max_abs_residual > 1e-3);
}

#[test]
fn zero_alpha_breaks_equivalence() {
    let ctl = synthetic();
    assert!(verify::closed_loop_equivalence(&ctl, 1000, 3).pass);
    let broken = verify::closed_loop_equivalence_with(&ctl, 200, 3, true);
    assert!(broken.max_abs_residual > 1e-6, "{broken:?}");
}

#[test]
fn zero_momentum_slice_has_identical_velocities() {
    let ctl = synthetic();
    for q2 in verify::linspace(-0.4, 0.4, 41) {
        let s = State::new([0.3, q2], [0.0, 0.0]);
        let direct = rip_core::sim::closed_loop_rhs_direct(&ctl, &s).unwrap();
        let composed = rip_core::sim::closed_loop_rhs_composed(&ctl, &s).unwrap();
        assert_eq!(direct.q_dot, Vector2::zeros());
        assert_eq!(composed.q_dot, Vector2::zeros());
    }
}

#[test]
fn remark2_value_at_origin() {
    let spec = CounterexampleSpec::new(1.0, 1.0, 1.0).unwrap();
    // m22(0) = 2 + 1, m22'(0) = 0
    let r0 = spec.residual(0.0, spec.claimed_m22(0.0), spec.claimed_m22_derivative(0.0));
    assert!((r0 - 10.0).abs() < 1e-12);
    assert_eq!(spec.claimed_m22_derivative(0.0), 0.0);
    let report = verify::remark2_residual(&spec, &verify::linspace(-1.0, 1.0, 1000));
    assert!(report.max_abs_residual > 0.1 && report.pass);
}

#[test]
fn remark2_derivative_matches_finite_difference() {
    let spec = CounterexampleSpec::new(0.7, 1.3, 0.9).unwrap();
    let h = 1e-5;
    for q2 in verify::linspace(-1.0, 1.0, 41) {
        let fd = (spec.claimed_m22(q2 + h) - spec.claimed_m22(q2 - h)) / (2.0 * h);
        assert!((fd - spec.claimed_m22_derivative(q2)).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn remark2_checker_is_sound() {
    let spec = CounterexampleSpec::new(1.0, 1.0, 1.0).unwrap();
    let r = verify::remark2_soundness(&spec, 1.0, 20_000, 0.5).unwrap();
    assert!(r.pass, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inertia_is_positive_definite(params in arb_params(), q2 in -10.0f64..10.0) {
        let (lo, _) = eig2(&params.inertia(q2));
        prop_assert!(lo > 0.0);
    }

    #[test]
    fn psi_times_m_is_md(ctl in arb_controller(), q2 in -1.5f64..1.5) {
        let lhs = ctl.psi_matrix(q2).matrix() * ctl.params.inertia(q2);
        let md = ctl.desired_inertia(q2);
        let scale = 1.0 + md.abs().max();
        prop_assert!((lhs - md).abs().max() < 1e-9 * scale);
    }

    #[test]
    fn alpha_routes_agree(ctl in arb_controller(), q2 in -1.5f64..1.5) {
        let a = ctl.alpha(q2);
        let b = ctl.alpha_from_matching(q2);
        let scale = 1.0 + a.abs().max();
        prop_assert!((a - b).abs().max() < 1e-9 * scale);
    }

    #[test]
    fn kinetic_matching_holds(ctl in arb_controller(), q2 in -1.5f64..1.5) {
        let e = verify::kinetic_residual_entries(&ctl, q2, &KineticOptions::default());
        let scale = 1.0 + ctl.psi_matrix(q2).matrix().abs().max().powi(2);
        for v in e {
            prop_assert!(v.abs() < 1e-10 * scale, "{:?}", e);
        }
    }

    #[test]
    fn potential_matching_holds(ctl in arb_controller(), q1 in -3.0f64..3.0, q2 in -1.5f64..1.5) {
        let psi = ctl.psi_matrix(q2);
        let g = ctl.shaped_potential_gradient(&Vector2::new(q1, q2));
        let r = -ctl.params.p5 * q2.sin() - psi.psi3 * g[0] - psi.psi4 * g[1];
        prop_assert!(r.abs() < 1e-10 * (1.0 + g.abs().max() * psi.psi3.abs()));
    }

    #[test]
    fn hessian_positive_definite_and_matches_fd(ctl in arb_controller()) {
        let r = verify::hessian_vd_check(&ctl);
        prop_assert_eq!(r.gradient_at_origin, [0.0, 0.0]);
        prop_assert!(r.min_eigenvalue > 0.0);
        let scale = r.hessian.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(r.fd_residual < 1e-5 * scale, "{} vs {}", r.fd_residual, scale);
    }

    #[test]
    fn rho_shrinks_as_k1_psi40_grows(ctl in arb_controller(), f in 0.1f64..0.99) {
        let mut smaller = ctl;
        smaller.gains.k1 *= f;
        let a = verify::region_rho(&ctl).unwrap();
        let b = verify::region_rho(&smaller).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn region_scan_agrees(ctl in arb_controller()) {
        let cells = 20_000;
        let rho = verify::region_rho(&ctl).unwrap();
        let scan = verify::region_rho_scan(&ctl, cells);
        prop_assert!((rho - scan).abs() <= std::f64::consts::FRAC_PI_2 / cells as f64);
    }

    #[test]
    fn d4_sign_flips_at_rho(ctl in arb_controller()) {
        let rho = verify::region_rho(&ctl).unwrap();
        let d4 = |q2: f64| ctl.desired_inertia(q2)[(1, 1)];
        prop_assert!(d4(rho * 0.999) > 0.0);
        prop_assert!(d4((rho * 1.001).min(std::f64::consts::FRAC_PI_2)) < 0.0);
        prop_assert!((d4(rho) - d4(-rho)).abs() < 1e-12);
    }

    #[test]
    fn remark2_claim_fails_for_positive_constants(k1 in 0.1f64..10.0, k2 in 0.1f64..10.0, b in 0.1f64..10.0) {
        let spec = CounterexampleSpec::new(k1, k2, b).unwrap();
        let r = verify::remark2_residual(&spec, &verify::linspace(-1.0, 1.0, 201));
        prop_assert!(r.max_abs_residual > 1e-2);
    }

    #[test]
    fn control_vanishes_only_with_potential(ctl in arb_controller()) {
        let s = State::new([0.0, 0.0], [0.0, 0.0]);
        prop_assert_eq!(ctl.control_law(&s).unwrap(), 0.0);
    }
}
