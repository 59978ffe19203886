use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smoothlab::grid::*;
use smoothlab::weyl::*;
use smoothlab::Error;

fn sym(e: Expr) -> Arc<dyn Symbol> {
    ExprSymbol::arc(e)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn multiplier_matrix(grid: &Grid, s: impl Fn(f64, f64) -> C64 + Send + Sync + Copy + 'static) -> DMatrix<C64> {
    let g = grid.clone();
    OperatorHandle::new(grid, false, move |v| apply_multiplier(s, &Field::from_vec(&g, v.to_vec())).unwrap().into_vec())
        .to_dense(DEFAULT_DENSE_CAP)
        .unwrap()
}

fn position_matrix(grid: &Grid, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
    let n = grid.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { C64::from(f(grid.xs()[i % grid.nx()])) } else { C64::default() })
}

#[test]
fn frequency_symbol_is_the_derivative_multiplier() {
    let g = Grid::new(3.0, 32, 8).unwrap();
    let q = quantize(&ExprSymbol::new(Expr::xi(), 1.0, 1.0), &g).unwrap();
    let d = multiplier_matrix(&g, |xi, _| C64::from(xi));
    assert!(max_abs(&(q.dense().unwrap() - d)) < 1e-10);
}

#[test]
fn position_times_frequency_is_symmetrized() {
    let g = Grid::new(3.0, 32, 8).unwrap();
    let q = quantize(&ExprSymbol::new(Expr::x() * Expr::xi(), 1.0, 1.0), &g).unwrap();
    let x = position_matrix(&g, |x| x);
    let d = multiplier_matrix(&g, |xi, _| C64::from(xi));
    let sym = (&x * &d + &d * &x) * C64::from(0.5);
    assert!(max_abs(&(q.dense().unwrap() - sym)) < 1e-10);
}

#[test]
fn angular_symbols() {
    let g = Grid::new(2.0, 8, 16).unwrap();
    let q = quantize(&ExprSymbol::new(Expr::theta().cos(), 0.0, 1.0), &g).unwrap();
    let n = g.len();
    let c = DMatrix::from_fn(n, n, |i, j| if i == j { C64::from(g.thetas()[i / g.nx()].cos()) } else { C64::default() });
    assert!(max_abs(&(q.dense().unwrap() - c)) < 1e-12);
    // the zero θ term routes this through the two-dimensional build
    let q = quantize(&ExprSymbol::new(Expr::eta() + Expr::theta().sin() * 0.0, 1.0, 1.0), &g).unwrap();
    let d = multiplier_matrix(&g, |_, eta| C64::from(eta));
    assert!(max_abs(&(q.dense().unwrap() - d)) < 1e-10);
}

#[test]
fn expansion_of_position_and_frequency_matches_product_on_interior() {
    let g = Grid::with_carrier(6.0, 64, 1, 0).unwrap();
    let e = compose_expand(sym(Expr::x()), sym(Expr::xi()), 1).unwrap();
    let lhs = quantize(&ExprSymbol::new(Expr::x(), 0.0, 1.0), &g).unwrap().dense().unwrap()
        * quantize(&ExprSymbol::new(Expr::xi(), 1.0, 1.0), &g).unwrap().dense().unwrap();
    let rhs = quantize(&e, &g).unwrap();
    let u = InteriorSubspace::default().basis(&g);
    let r = (&lhs - rhs.dense().unwrap()) * &u;
    assert!(restricted_norm(&r) < 1e-10 * restricted_norm(&(&lhs * &u)));
    // higher orders add nothing for this pair
    let e3 = compose_expand(sym(Expr::x()), sym(Expr::xi()), 3).unwrap();
    let r3 = quantize(&e3, &g).unwrap().dense().unwrap() - rhs.dense().unwrap();
    assert!(max_abs(&r3) < 1e-12);
}

#[test]
fn first_order_expansion_term_is_half_the_poisson_symbol() {
    let spec = smoothlab::geometry::PerturbationSpec::angular(1.0, 0.5, 1.5).unit_peak(2);
    let a = sym(Expr::perturbation(&spec, 2) * Expr::xi().japanese(1.0));
    let b = sym(Expr::xi().powi(2) + Expr::profile_inv_sq(Expr::x(), 2) * Expr::eta().powi(2));
    let e0 = compose_expand(a.clone(), b.clone(), 0).unwrap();
    let e1 = compose_expand(a.clone(), b.clone(), 1).unwrap();
    let p = PoissonSymbol { a, b };
    for pt in [Point::new(0.3, 0.7, 1.5, 4.0), Point::new(-1.1, 2.0, -3.0, -2.0)] {
        let d = e1.eval(pt) - e0.eval(pt) - p.eval(pt) * 0.5;
        assert!(d.norm() < 1e-12 * p.eval(pt).norm().max(1.0));
    }
}

#[test]
fn self_expansion_of_real_symbol_is_hermitian() {
    let g = Grid::new(3.0, 16, 8).unwrap();
    let a = sym((Expr::theta().cos() + 2.0) * (-(Expr::x().powi(2))).exp() * Expr::xi().japanese(-1.0) * Expr::eta().japanese(0.5));
    let e = compose_expand(a.clone(), a, 3).unwrap();
    let m = quantize(&e, &g).unwrap();
    let m = m.dense().unwrap();
    assert!(hermiticity_defect(m) < 1e-10 * max_abs(m).max(1.0));
}

#[test]
fn commuting_multipliers_have_zero_residual() {
    let g = Grid::new(3.0, 32, 8).unwrap();
    let a = sym(Expr::xi().powi(2) + Expr::eta());
    let b = sym(Expr::xi().japanese(0.5) * Expr::eta().cos());
    let r = commutator_residual(a, b, &g).unwrap();
    assert!(r.resid_poisson < 1e-12 && r.commutator_norm < 1e-12, "{r:?}");
}

#[test]
fn canonical_pair_residual() {
    let g = Grid::with_carrier(6.0, 64, 1, 0).unwrap();
    let r = commutator_residual(sym(Expr::x()), sym(Expr::xi()), &g).unwrap();
    assert!(r.resid_poisson < 1e-10, "{r:?}");
    assert!((r.commutator_norm - 1.0).abs() < 1e-8);
}

#[test]
fn poisson_residual_decays_over_dyadic_blocks() {
    let g = Grid::with_carrier(8.0, 128, 1, 0).unwrap();
    // the remainder has order 2 − 3ε, so it decays in H for ε > 2/3
    let eps = 0.9;
    let a = sym(Expr::x().lambda(1.0) * (Expr::xi() * Expr::eta().japanese(-eps)).lambda(1.0));
    let b = sym(Expr::xi().powi(2) + Expr::profile_inv_sq(Expr::x(), 2) * Expr::eta().powi(2));
    let sub = InteriorSubspace::default();
    let rs: Vec<CommutatorResidual> =
        [8, 16, 32].iter().map(|&h| commutator_residual_block(a.clone(), b.clone(), &g, h, sub).unwrap()).collect();
    for w in rs.windows(2) {
        assert!(w[1].resid_poisson < w[0].resid_poisson, "{rs:?}");
    }
}

#[test]
fn garding_positivity() {
    let g = Grid::new(3.0, 16, 8).unwrap();
    let q = quantize(&ExprSymbol::new(Expr::xi().powi(2) + Expr::eta().powi(2) + 1.0, 2.0, 1.0), &g).unwrap();
    assert!(min_eigenvalue(q.dense().unwrap()) > 1.0 - 1e-10);
    let x_dep = ExprSymbol::new(Expr::xi().powi(2) + Expr::eta().powi(2) + 1.0 + (-(Expr::x().powi(2))).exp(), 2.0, 1.0);
    let q = quantize(&x_dep, &g).unwrap();
    assert!(min_eigenvalue(q.dense().unwrap()) > 0.0);
}

#[test]
fn frequency_only_symbols_match_multipliers() {
    let g = Grid::new(2.5, 32, 8).unwrap();
    let s = |xi: f64, eta: f64| ((1.0 + xi * xi).sqrt() * (eta * 0.3).sin()).exp();
    let q = quantize(&ExprSymbol::new((Expr::xi().japanese(1.0) * (Expr::eta() * 0.3).sin()).exp(), 0.0, 1.0), &g).unwrap();
    let m = multiplier_matrix(&g, move |xi, eta| C64::from(s(xi, eta)));
    assert!(max_abs(&(q.dense().unwrap() - &m)) < 1e-12 * max_abs(&m));
}

#[test]
fn audit_of_constant_symbol() {
    let r = audit_symbol_class(&ExprSymbol::new(Expr::c(1.0), 0.0, 1.0), 0.0, 1.0, 2).unwrap();
    assert!(r.passed);
    assert!(r.constants.iter().all(|c| c.constant <= 1.0));
}

#[test]
fn audit_rejects_frequency_as_order_zero() {
    let r = audit_symbol_class(&ExprSymbol::new(Expr::xi(), 1.0, 1.0), 0.0, 1.0, 1);
    assert!(matches!(r, Err(Error::SymbolAuditFailed { .. })), "{r:?}");
}

#[test]
fn audit_accepts_escape_symbol() {
    let (delta, m_cut, eps) = (0.25, 8.0, 0.5);
    let a = Expr::eta().high_pass(m_cut)
        * (Expr::x().cutoff(delta)
            * ((Expr::xi() / Expr::eta()).cutoff(delta)
                * Expr::x().lambda(1.0)
                * (Expr::xi() * Expr::eta().abs().powf(-eps)).lambda(1.0)));
    let r = audit_symbol_class(&ExprSymbol::new(a, 0.0, eps), 0.0, eps, 2).unwrap();
    assert!(r.passed);
    assert!(r.constants.iter().all(|c| c.constant.is_finite()));
}

#[test]
fn dense_export_roundtrip() {
    let g = Grid::new(2.0, 8, 8).unwrap();
    let q = quantize(&ExprSymbol::new(Expr::x() * Expr::xi() + Expr::theta().sin(), 1.0, 1.0), &g).unwrap();
    let mut buf = Vec::new();
    write_dense(&mut buf, q.dense().unwrap()).unwrap();
    assert_eq!(buf.len(), 16 + 16 * g.len() * g.len());
    let back = read_dense(&mut buf.as_slice()).unwrap();
    assert_eq!(&back, q.dense().unwrap());
}

#[test]
fn oversized_grid_rejected() {
    let g = Grid::new(2.0, 256, 128).unwrap();
    let r = quantize(&ExprSymbol::new(Expr::c(1.0), 0.0, 1.0), &g);
    assert!(matches!(r, Err(Error::GridTooLarge { dim: 32768, cap: 16384 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn quantization_is_linear(al in -2.0f64..2.0, be in -2.0f64..2.0, k in 0.1f64..2.0) {
        let g = Grid::new(2.0, 8, 8).unwrap();
        let a = sym((Expr::x() * k).cos() * Expr::xi());
        let b = sym(Expr::theta().sin() * Expr::eta().japanese(1.0) + Expr::x());
        let lin = LinearSymbol { terms: vec![(C64::from(al), a.clone()), (C64::from(be), b.clone())] };
        let l = quantize(&lin, &g).unwrap();
        let qa = quantize(&*a, &g).unwrap();
        let qb = quantize(&*b, &g).unwrap();
        let want = qa.dense().unwrap() * C64::from(al) + qb.dense().unwrap() * C64::from(be);
        prop_assert!(max_abs(&(l.dense().unwrap() - want)) < 1e-12 * 10.0);
    }

    #[test]
    fn real_symbols_give_hermitian_matrices(c1 in -2.0f64..2.0, c2 in 0.1f64..3.0, c3 in -1.0f64..1.0) {
        let g = Grid::new(2.5, 16, 8).unwrap();
        let a = ExprSymbol::new(
            (Expr::x() * c1 + Expr::theta().cos() * c3).sin() * (Expr::xi() * c2).atan() + Expr::eta() * Expr::x().japanese(-1.0),
            0.0,
            1.0,
        );
        let q = quantize(&a, &g).unwrap();
        prop_assert!(hermiticity_defect(q.dense().unwrap()) < 1e-12);
    }

    #[test]
    fn matrix_free_apply_agrees_with_dense(seed in any::<u64>()) {
        let g = Grid::new(2.0, 8, 8).unwrap();
        let a = quantize(&ExprSymbol::new(Expr::x() * Expr::xi() + Expr::theta().cos(), 1.0, 1.0), &g).unwrap();
        let b = quantize(&ExprSymbol::new(Expr::theta().cos() * Expr::eta() + Expr::x().powi(2), 1.0, 1.0), &g).unwrap();
        let comm = a.commutator(&b);
        let dense = a.dense().unwrap() * b.dense().unwrap() - b.dense().unwrap() * a.dense().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Field::random_band_limited(&g, &mut rng, 1.0, 4);
        let x = comm.apply(&u);
        let y = &dense * nalgebra::DVector::from_column_slice(u.data());
        let d: f64 = x.data().iter().zip(y.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(d <= 1e-10 * y.norm().max(1e-300));
    }
}
