use proptest::prelude::*;
use smoothlab::oscillator::*;
use smoothlab::Error;

/// Quartic ground state, frozen from [`shoot_ground_state`].
const QUARTIC_GROUND: f64 = 1.0603620904841828;

/// Even ground state of `−u'' + x^{2m}u = λu` by RK4 shooting from `x = 0`
/// and bisection on the sign of `u(X)`.
fn shoot_ground_state(m: u32, x_end: f64, steps: usize) -> f64 {
    let sign_at_end = |lambda: f64| {
        let h = x_end / steps as f64;
        let f = |x: f64, u: f64, v: f64| (v, (x.powi(2 * m as i32) - lambda) * u);
        let (mut x, mut u, mut v) = (0.0, 1.0, 0.0);
        for _ in 0..steps {
            let (k1u, k1v) = f(x, u, v);
            let (k2u, k2v) = f(x + h / 2.0, u + h / 2.0 * k1u, v + h / 2.0 * k1v);
            let (k3u, k3v) = f(x + h / 2.0, u + h / 2.0 * k2u, v + h / 2.0 * k2v);
            let (k4u, k4v) = f(x + h, u + h * k3u, v + h * k3v);
            u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            x += h;
        }
        u > 0.0
    };
    let (mut lo, mut hi) = (0.1, 3.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if sign_at_end(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn shooting_oracle_reproduces_the_frozen_quartic_value() {
    let a = shoot_ground_state(2, 5.0, 20_000);
    let b = shoot_ground_state(2, 6.0, 40_000);
    assert!((a - b).abs() < 1e-11, "{a} {b}");
    assert!((b - QUARTIC_GROUND).abs() < 1e-11, "{b}");
}

#[test]
fn harmonic_spectrum_is_odd_integers() {
    let s = eig_anharmonic_auto(1, 1.0, 6).unwrap();
    for (j, l) in s.values.iter().enumerate() {
        assert!((l - (2 * j + 1) as f64).abs() < 1e-8, "{j}: {l}");
    }
    assert!(s.refinement_change <= CONVERGENCE_TOL);
}

#[test]
fn quartic_ground_state_matches_shooting() {
    let s = eig_anharmonic_auto(2, 1.0, 1).unwrap();
    assert!((s.values[0] - QUARTIC_GROUND).abs() < 1e-8 * QUARTIC_GROUND, "{}", s.values[0]);
}

#[test]
fn rescaling_in_eta_is_exact() {
    let one = eig_anharmonic_auto(2, 1.0, 3).unwrap();
    let big = eig_anharmonic_auto(2, 16.0, 3).unwrap();
    let f = 16f64.powf(2.0 / 3.0);
    for (a, b) in one.values.iter().zip(&big.values) {
        assert!((b - f * a).abs() < 1e-7 * b, "{a} {b}");
    }
}

#[test]
fn ground_state_is_localized() {
    for m in [2, 3, 4] {
        let s = eig_anharmonic_auto(m, 1.0, 1).unwrap();
        let xt = s.turning_point(0);
        assert!(s.ground_mass_outside(4.0 * xt) < 1e-10, "m={m}: {}", s.ground_mass_outside(4.0 * xt));
        assert!(s.ground_mass_outside(2.0 * xt) < 1e-3, "m={m}: {}", s.ground_mass_outside(2.0 * xt));
        let total: f64 = s.ground_mass_outside(-1.0);
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn small_box_is_rejected() {
    let p = OscillatorProblem { m: 2, eta: 1.0, grid: OscillatorGrid { half_width: 1.5, points: 64 }, k: 3 };
    assert!(matches!(eig_anharmonic(&p), Err(Error::DomainTooSmall { .. })));
}

#[test]
fn coarse_grid_is_not_converged() {
    let p = OscillatorProblem { m: 2, eta: 1.0, grid: OscillatorGrid { half_width: 8.0, points: 16 }, k: 1 };
    assert!(matches!(eig_anharmonic(&p), Err(Error::NotConverged { .. })));
}

#[test]
fn invalid_problems_are_rejected() {
    assert!(OscillatorProblem::auto(0, 1.0, 1).is_err());
    assert!(OscillatorProblem::auto(2, 0.5, 1).is_err());
    assert!(OscillatorProblem::auto(2, 1.0, 0).is_err());
    assert!(easy_lemma_check(2, 0.1, &[4, -1]).is_err());
    assert!(easy_lemma_check(2, 0.1, &[]).is_err());
}

#[test]
fn lemma_ratio_is_constant_across_modes() {
    let c = easy_lemma_check(2, 0.1, &[4, 16, 64]).unwrap();
    let r0 = c.per_mode[0].ratio_to_scaling;
    for r in &c.per_mode {
        assert!((r.ratio_to_scaling - r0).abs() < 1e-6 * r0, "{r:?}");
        assert!(r.lambda0 > 0.0);
    }
    assert!(c.c_est > 0.0 && c.c_est <= r0);
}

#[test]
fn lemma_ratio_scales_with_exponent_one_half_for_m3() {
    let c = easy_lemma_check(3, 0.1, &[8, 64]).unwrap();
    let ratio = c.per_mode[1].lambda0 / c.per_mode[0].lambda0;
    assert!((ratio - 2f64.powf(1.5)).abs() < 1e-6 * ratio, "{ratio}");
}

#[test]
fn csv_rows_carry_the_scaling_ratio() {
    let s = eig_anharmonic_auto(3, 4.0, 2).unwrap();
    let rows = s.rows();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].j, 1);
    assert!((rows[0].ratio_to_scaling * 4f64.powf(0.5) - rows[0].lambda).abs() < 1e-12 * rows[0].lambda);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ground_state_is_positive_and_scales(m in 2u32..5, eta in 1.0f64..200.0) {
        let one = eig_anharmonic_auto(m, 1.0, 2).unwrap();
        let s = eig_anharmonic_auto(m, eta, 2).unwrap();
        let f = eta.powf(2.0 / (m as f64 + 1.0));
        prop_assert!(s.values[0] > 0.0);
        prop_assert!(s.values[0] < s.values[1]);
        for (a, b) in one.values.iter().zip(&s.values) {
            prop_assert!((b - f * a).abs() < 1e-6 * b);
        }
    }
}
