use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smoothlab::evolve::*;
use smoothlab::geometry::{PerturbationSpec, SurfaceSpec};
use smoothlab::grid::*;
use smoothlab::operators::*;
use smoothlab::weyl::OperatorHandle;
use smoothlab::Error;

fn surface(m: u32, s: f64, f: PerturbationSpec) -> Surface {
    Surface::audited(SurfaceSpec { m, s, f: f.unit_peak(m) }).unwrap()
}

fn q_sym(s: &Surface, g: &Grid) -> OperatorHandle {
    assemble_q_r(s, g).unwrap().q_sym
}

fn state(g: &Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::random_localized(g, &mut rng, 0.2, (g.ntheta() / 4) as i64, g.l() / 8.0)
}

fn coherent(g: &Grid, eta0: i64) -> Field {
    let u = Field::mode(g, eta0, |x| C64::new((-x * x / 2.0).exp(), 0.0));
    let n = u.norm();
    u.scaled(C64::new(1.0 / n, 0.0))
}

fn dist(a: &Field, b: &Field) -> f64 {
    a.sub(b).norm()
}

#[test]
fn zero_time_returns_initial_data() {
    let g = Grid::new(8.0, 64, 8).unwrap();
    let q = q_sym(&surface(2, 0.0, PerturbationSpec::zero()), &g);
    let u = state(&g, 1);
    let tr = propagate(&q, &u, &PropagateConfig::new(0.0, 1e-2, 1e-2)).unwrap();
    assert_eq!(tr.samples.len(), 1);
    assert_eq!(tr.last().data(), u.data());
}

#[test]
fn rotationally_symmetric_evolution_keeps_mode_norms() {
    let g = Grid::new(8.0, 128, 16).unwrap();
    let q = q_sym(&surface(2, 0.0, PerturbationSpec::zero()), &g);
    let a = Field::mode(&g, 3, |x| C64::new((-x * x).exp(), 0.0));
    let b = Field::mode(&g, -2, |x| C64::new(0.0, (-(x - 1.0).powi(2)).exp()));
    let mut u = a.clone();
    u.axpy(C64::new(1.0, 0.0), &b);
    let tr = propagate(&q, &u, &PropagateConfig::new(0.5, 1e-2, 0.1)).unwrap();
    let n0 = u.mode_norms();
    for v in &tr.samples {
        for (x, y) in v.mode_norms().iter().zip(&n0) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn forward_then_backward_returns_initial_data() {
    let g = Grid::new(8.0, 128, 16).unwrap();
    let q = q_sym(&surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
    let u = state(&g, 2);
    let cfg = PropagateConfig::new(0.5, 1e-2, 0.05);
    let fwd = propagate(&q, &u, &cfg).unwrap();
    let back = propagate(&q.scale(C64::new(-1.0, 0.0)), fwd.last(), &cfg).unwrap();
    let err = dist(back.last(), &u) / u.norm();
    assert!(err < 1e-6, "round trip {err:e}");
    assert!(dist(fwd.last(), &u) > 1e-2, "evolution did nothing");
}

#[test]
fn norm_and_energy_are_conserved() {
    let g = Grid::new(8.0, 128, 16).unwrap();
    let q = q_sym(&surface(3, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
    let u = state(&g, 3);
    let tr = propagate(&q, &u, &PropagateConfig::new(1.0, 1e-2, 0.05)).unwrap();
    for (t, d) in tr.times.iter().zip(&tr.drift) {
        assert!(d.abs() < 1e-8 * (1.0 + t) * u.norm(), "drift {d:e} at {t}");
    }
    let e = tr.energies(&q);
    for x in &e {
        assert!((x - e[0]).abs() < 1e-7 * e[0].abs(), "{x} vs {}", e[0]);
    }
    assert!(tr.max_step_error <= 1e-10);
}

#[test]
fn halving_dt_leaves_the_final_state_unchanged() {
    let g = Grid::new(8.0, 128, 16).unwrap();
    let q = q_sym(&surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
    let u = state(&g, 4);
    let a = propagate(&q, &u, &PropagateConfig::new(0.5, 1e-2, 0.05)).unwrap();
    let b = propagate(&q, &u, &PropagateConfig::new(0.5, 5e-3, 0.05)).unwrap();
    let err = dist(a.last(), b.last()) / u.norm();
    assert!(err < 1e-7, "{err:e}");
}

#[test]
fn crank_nicolson_agrees_with_krylov() {
    let g = Grid::new(8.0, 64, 8).unwrap();
    let q = q_sym(&surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Field::random_band_limited(&g, &mut rng, 0.1, 1);
    let kr = propagate(&q, &u, &PropagateConfig::new(0.2, 1e-3, 0.1)).unwrap();
    let errs: Vec<f64> = [2e-3, 1e-3]
        .iter()
        .map(|&dt| {
            let cfg = PropagateConfig::new(0.2, dt, 0.1).with_integrator(Integrator::CrankNicolson);
            let cn = propagate(&q, &u, &cfg).unwrap();
            dist(cn.last(), kr.last()) / u.norm()
        })
        .collect();
    assert!(errs[1] < 1e-3, "{errs:?}");
    // second order in dt
    assert!(errs[0] / errs[1] > 3.0 && errs[0] / errs[1] < 5.0, "{errs:?}");
}

#[test]
fn absorber_removes_mass_leaving_the_interior() {
    let g = Grid::with_carrier(10.0, 256, 1, 8).unwrap();
    let q = q_sym(&surface(2, 0.0, PerturbationSpec::zero()), &g);
    let u = Field::mode(&g, 8, |x| C64::from_polar((-(x - 2.0).powi(2)).exp(), 6.0 * x));
    let cfg = PropagateConfig::new(1.5, 1e-2, 0.1).with_absorber(Absorber { start: 6.0, strength: 40.0 });
    let tr = propagate(&q, &u, &cfg).unwrap();
    assert!(tr.last().norm() < 0.1 * u.norm(), "{}", tr.last().norm());
    for w in tr.samples.windows(2) {
        assert!(w[1].norm() <= w[0].norm() * (1.0 + 1e-12));
    }
}

#[test]
fn propagation_rejects_non_hermitian_operators() {
    let g = Grid::new(8.0, 64, 8).unwrap();
    let qr = assemble_q_r(&surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g).unwrap();
    let u = state(&g, 6);
    let err = propagate(&qr.q, &u, &PropagateConfig::new(0.1, 1e-2, 1e-2)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    let err = propagate(&qr.q_sym, &u, &PropagateConfig::new(0.1, 2e-2, 1e-2)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
}

#[test]
fn boundary_mass_is_flagged_or_rejected() {
    let g = Grid::new(6.0, 128, 8).unwrap();
    let q = q_sym(&surface(2, 0.0, PerturbationSpec::zero()), &g);
    let u = Field::mode(&g, 0, |x| C64::from_polar((-(x - 3.0).powi(2)).exp(), 8.0 * x));
    let mut cfg = PropagateConfig::new(0.5, 1e-2, 0.1);
    assert!(propagate(&q, &u, &cfg).unwrap().boundary_flagged);
    cfg.strict_boundary = true;
    let err = propagate(&q, &u, &cfg).unwrap_err();
    assert!(matches!(err, Error::BoundaryMassExceeded { .. }), "{err}");
}

#[test]
fn scalar_commutant_gives_zero_identity_residual() {
    let g = Grid::new(8.0, 128, 16).unwrap();
    let q = q_sym(&surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
    let u = state(&g, 7);
    let tr = propagate(&q, &u, &PropagateConfig::new(0.5, 1e-2, 0.05)).unwrap();
    let b = OperatorHandle::identity(&g).scale(C64::new(2.5, 0.0));
    let r = commutator_identity_residual(&q, &b, &tr);
    assert!(r.lhs.norm() < 1e-10 && r.rhs.norm() < 1e-7, "{r:?}");
    assert!(r.residual < 1e-7, "{r:?}");
}

fn identity_run(s: &Surface, g: &Grid, eta0: i64, dt_out: f64) -> IdentityResidual {
    let q = q_sym(s, g);
    let u = coherent(g, eta0);
    let tr = propagate(&q, &u, &PropagateConfig::new(1.0, dt_out, dt_out)).unwrap();
    assert!(!tr.boundary_flagged, "{:?}", tr.boundary_mass.last());
    commutator_identity_residual(&q, &commutant_b(g), &tr)
}

#[test]
fn commutator_identity_holds_for_coherent_data() {
    let g = Grid::with_carrier(48.0, 1024, 1, 16).unwrap();
    let s = surface(2, 0.0, PerturbationSpec::zero());
    let coarse = identity_run(&s, &g, 16, 1e-2);
    let fine = identity_run(&s, &g, 16, 5e-3);
    assert!(coarse.residual < 1e-5, "{coarse:?}");
    assert!(fine.residual <= coarse.residual * 1.01, "{fine:?} vs {coarse:?}");
    assert!(coarse.residual_plus_sign > 1e-2, "{coarse:?}");
}

#[test]
fn commutator_identity_holds_with_angular_perturbation() {
    let g = Grid::with_carrier(48.0, 1024, 8, 16).unwrap();
    let s = surface(2, 0.05, PerturbationSpec::angular(1.0, 0.5, 1.0));
    let coarse = identity_run(&s, &g, 16, 1e-2);
    let fine = identity_run(&s, &g, 16, 5e-3);
    assert!(coarse.residual < 1e-5, "{coarse:?}");
    assert!(fine.residual <= coarse.residual, "{fine:?} vs {coarse:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn unitarity_holds_for_random_data(seed in 0u64..1000, s in -0.05f64..0.05, m in 2u32..4) {
        let g = Grid::new(8.0, 64, 8).unwrap();
        let q = q_sym(&surface(m, s, PerturbationSpec::angular(1.0, 0.5, 1.0)), &g);
        let u = state(&g, seed);
        let tr = propagate(&q, &u, &PropagateConfig::new(0.3, 1e-2, 0.1)).unwrap();
        for (t, d) in tr.times.iter().zip(&tr.drift) {
            prop_assert!(d.abs() < 1e-8 * (1.0 + t) * u.norm());
        }
    }
}
