//! Symbols on `ℝ_x × S¹_θ × ℝ_ξ × ℤ_η`, their discrete Weyl quantization,
//! and the composition/commutator calculus.
//!
//! Symbols expose Taylor jets in `(x, θ, ξ)`; the `η` direction is only
//! ever differenced, `Δ_η a(η) = a(η + 1) − a(η)`.
//!
//! Dense quantization on the periodic grid uses the kernel
//! `K(j, k) = N^{-1} Σ_p e^{iξ_p(x_j − x_k)} a((x_j + x_k)/2, ξ_p)` with
//! unwrapped midpoints, and the same rule in `(θ, η)`. Real symbols give
//! Hermitian matrices, `a(x)` gives the diagonal `a(x_j)`, and `xξ` gives
//! `(xD + Dx)/2` exactly.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::ops;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PerturbationSpec;
use crate::grid::{Field, Grid, C64};
use crate::jet::{factorial, Jet, Real, Var, MAX_ORDER};
use crate::special;

pub const DEFAULT_DENSE_CAP: usize = 16384;

type E = Arc<Expr>;

/// Expression tree for real symbols built from smooth primitives.
#[derive(Clone, Debug)]
pub enum Expr {
    Const(f64),
    X,
    Theta,
    Xi,
    Eta,
    Add(E, E),
    Sub(E, E),
    Mul(E, E),
    Div(E, E),
    Neg(E),
    Powi(E, u32),
    Powf(E, f64),
    Exp(E),
    Atan(E),
    Cos(E),
    Sin(E),
    /// `|t|`, smooth away from `t = 0`.
    Abs(E),
    /// `(1 + t²)^{p/2}`.
    Japanese(E, f64),
    /// `Λ(t)` with exponent `ε₀`.
    Lambda(E, f64),
    /// `χ(t; δ)`.
    Cutoff(E, f64),
    /// `χ̃(t; M)`.
    HighPass(E, f64),
    /// `ψ(t)`.
    Bump(E),
    /// `f(x, θ)` of a perturbation family.
    Perturbation { x: E, theta: E, spec: PerturbationSpec, m: u32 },
}

/// Evaluation point for [`Expr::eval`].
pub struct Vars<S> {
    pub x: S,
    pub theta: S,
    pub xi: S,
    pub eta: f64,
}

impl Expr {
    pub fn eval<S: Real>(&self, v: &Vars<S>) -> S {
        use Expr::*;
        match self {
            Const(c) => v.x.cst(*c),
            X => v.x.clone(),
            Theta => v.theta.clone(),
            Xi => v.xi.clone(),
            Eta => v.x.cst(v.eta),
            Add(a, b) => a.eval(v) + b.eval(v),
            Sub(a, b) => a.eval(v) - b.eval(v),
            Mul(a, b) => {
                // cutoffs come first so their zeros guard singular factors
                let l = a.eval(v);
                if l.is_identically_zero() {
                    return l;
                }
                l * b.eval(v)
            }
            Div(a, b) => {
                let l = a.eval(v);
                if l.is_identically_zero() {
                    return l;
                }
                l / b.eval(v)
            }
            Neg(a) => -a.eval(v),
            Powi(a, n) => a.eval(v).powi(*n),
            Powf(a, p) => a.eval(v).powf(*p),
            Exp(a) => a.eval(v).exp(),
            Atan(a) => a.eval(v).atan(),
            Cos(a) => a.eval(v).cos(),
            Sin(a) => a.eval(v).sin(),
            Abs(a) => {
                let t = a.eval(v);
                if t.val() < 0.0 {
                    -t
                } else {
                    t
                }
            }
            Japanese(a, p) => a.eval(v).japanese(*p),
            Lambda(a, e0) => special::lambda(&a.eval(v), *e0),
            Cutoff(a, d) => special::cutoff(&a.eval(v), *d),
            HighPass(a, m) => special::high_pass(&a.eval(v), *m),
            Bump(a) => special::bump(&a.eval(v)),
            Perturbation { x, theta, spec, m } => spec.eval(&x.eval(v), &theta.eval(v), *m),
        }
    }

    pub fn depends_on_theta(&self) -> bool {
        use Expr::*;
        match self {
            Theta => true,
            Const(_) | X | Xi | Eta => false,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.depends_on_theta() || b.depends_on_theta(),
            Neg(a) | Powi(a, _) | Powf(a, _) | Exp(a) | Atan(a) | Cos(a) | Sin(a) | Abs(a) | Japanese(a, _)
            | Lambda(a, _) | Cutoff(a, _) | HighPass(a, _) | Bump(a) => a.depends_on_theta(),
            Perturbation { x, theta, spec, .. } => {
                x.depends_on_theta() || (!spec.is_theta_independent() && theta.depends_on_theta())
            }
        }
    }

    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }
    pub fn x() -> Expr {
        Expr::X
    }
    pub fn theta() -> Expr {
        Expr::Theta
    }
    pub fn xi() -> Expr {
        Expr::Xi
    }
    pub fn eta() -> Expr {
        Expr::Eta
    }
    pub fn powi(self, n: u32) -> Expr {
        Expr::Powi(Arc::new(self), n)
    }
    pub fn powf(self, p: f64) -> Expr {
        Expr::Powf(Arc::new(self), p)
    }
    pub fn exp(self) -> Expr {
        Expr::Exp(Arc::new(self))
    }
    pub fn atan(self) -> Expr {
        Expr::Atan(Arc::new(self))
    }
    pub fn cos(self) -> Expr {
        Expr::Cos(Arc::new(self))
    }
    pub fn sin(self) -> Expr {
        Expr::Sin(Arc::new(self))
    }
    pub fn abs(self) -> Expr {
        Expr::Abs(Arc::new(self))
    }
    pub fn japanese(self, p: f64) -> Expr {
        Expr::Japanese(Arc::new(self), p)
    }
    pub fn lambda(self, eps0: f64) -> Expr {
        Expr::Lambda(Arc::new(self), eps0)
    }
    pub fn cutoff(self, delta: f64) -> Expr {
        Expr::Cutoff(Arc::new(self), delta)
    }
    pub fn high_pass(self, m: f64) -> Expr {
        Expr::HighPass(Arc::new(self), m)
    }
    pub fn bump(self) -> Expr {
        Expr::Bump(Arc::new(self))
    }
    /// `f(x, θ)`.
    pub fn perturbation(spec: &PerturbationSpec, m: u32) -> Expr {
        Expr::Perturbation { x: Arc::new(Expr::X), theta: Arc::new(Expr::Theta), spec: spec.clone(), m }
    }
    /// `A(t)^{-2} = (1 + t^{2m})^{-1/m}`.
    pub fn profile_inv_sq(t: Expr, m: u32) -> Expr {
        (t.powi(2 * m) + 1.0).powf(-1.0 / m as f64)
    }
    /// `A^{-3}A'(t) = t^{2m-1}(1 + t^{2m})^{-1-1/m}`.
    pub fn profile_cube_slope(t: Expr, m: u32) -> Expr {
        t.clone().powi(2 * m - 1) * (t.powi(2 * m) + 1.0).powf(-1.0 - 1.0 / m as f64)
    }
}

macro_rules! expr_binop {
    ($tr:ident, $m:ident, $var:ident) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$var(Arc::new(self), Arc::new(rhs))
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::$var(Arc::new(self), Arc::new(Expr::Const(rhs)))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$var(Arc::new(Expr::Const(self)), Arc::new(rhs))
            }
        }
    };
}
expr_binop!(Add, add, Add);
expr_binop!(Sub, sub, Sub);
expr_binop!(Mul, mul, Mul);
expr_binop!(Div, div, Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Arc::new(self))
    }
}

/// Phase-space point; `eta` is an integer-valued frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub theta: f64,
    pub xi: f64,
    pub eta: f64,
}

impl Point {
    pub fn new(x: f64, theta: f64, xi: f64, eta: f64) -> Point {
        Point { x, theta, xi, eta }
    }
    fn shifted(self, d: f64) -> Point {
        Point { eta: self.eta + d, ..self }
    }
}

/// Complex-valued jet (real and imaginary parts).
#[derive(Clone, Debug)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub fn real(re: Jet) -> CJet {
        let im = Jet::constant(0.0, re.order());
        CJet { re, im }
    }
    pub fn zero(order: usize) -> CJet {
        CJet::real(Jet::constant(0.0, order))
    }
    pub fn value(&self) -> C64 {
        C64::new(self.re.value(), self.im.value())
    }
    pub fn partial(&self, m: [usize; 3]) -> C64 {
        C64::new(self.re.partial(m), self.im.partial(m))
    }
    pub fn order(&self) -> usize {
        self.re.order()
    }
    pub fn derivative(&self, m: [usize; 3]) -> CJet {
        CJet { re: self.re.derivative(m), im: self.im.derivative(m) }
    }
    pub fn truncate(&self, order: usize) -> CJet {
        CJet { re: self.re.truncate(order), im: self.im.truncate(order) }
    }
    pub fn mul(&self, o: &CJet) -> CJet {
        CJet { re: &(&self.re * &o.re) - &(&self.im * &o.im), im: &(&self.re * &o.im) + &(&self.im * &o.re) }
    }
    pub fn add(&self, o: &CJet) -> CJet {
        CJet { re: &self.re + &o.re, im: &self.im + &o.im }
    }
    pub fn sub(&self, o: &CJet) -> CJet {
        CJet { re: &self.re - &o.re, im: &self.im - &o.im }
    }
    pub fn scale(&self, c: C64) -> CJet {
        CJet {
            re: self.re.clone() * c.re - self.im.clone() * c.im,
            im: self.re.clone() * c.im + self.im.clone() * c.re,
        }
    }
}

/// A symbol `a(x, θ, ξ, η)`.
pub trait Symbol: Send + Sync {
    /// Jet in `(x, θ, ξ)` of total degree `order` at fixed `η`.
    fn jet(&self, p: Point, order: usize) -> CJet;

    fn eval(&self, p: Point) -> C64 {
        self.jet(p, 0).value()
    }

    fn is_real(&self) -> bool {
        true
    }

    fn theta_independent(&self) -> bool {
        false
    }

    /// Highest jet order this symbol can provide.
    fn max_order(&self) -> usize {
        MAX_ORDER
    }
}

fn jet_vars(p: Point, order: usize) -> Vars<Jet> {
    Vars {
        x: Jet::variable(Var::X, p.x, order),
        theta: Jet::variable(Var::Theta, p.theta, order),
        xi: Jet::variable(Var::Xi, p.xi, order),
        eta: p.eta,
    }
}

/// Real symbol from an [`Expr`], with its declared class `S^{m_sym}_ρ`.
#[derive(Clone, Debug)]
pub struct ExprSymbol {
    pub expr: Expr,
    pub m_sym: f64,
    pub rho: f64,
    theta_free: bool,
}

impl ExprSymbol {
    pub fn new(expr: Expr, m_sym: f64, rho: f64) -> ExprSymbol {
        let theta_free = !expr.depends_on_theta();
        ExprSymbol { expr, m_sym, rho, theta_free }
    }

    pub fn arc(expr: Expr) -> Arc<dyn Symbol> {
        Arc::new(ExprSymbol::new(expr, 0.0, 1.0))
    }
}

impl Symbol for ExprSymbol {
    fn jet(&self, p: Point, order: usize) -> CJet {
        CJet::real(self.expr.eval(&jet_vars(p, order)))
    }
    fn eval(&self, p: Point) -> C64 {
        C64::from(self.expr.eval(&Vars { x: p.x, theta: p.theta, xi: p.xi, eta: p.eta }))
    }
    fn theta_independent(&self) -> bool {
        self.theta_free
    }
}

/// `Δ_η^k a` as a jet.
pub fn eta_difference(a: &dyn Symbol, p: Point, order: usize, k: usize) -> CJet {
    let mut acc = CJet::zero(order);
    for i in 0..=k {
        let c = factorial(k) / (factorial(i) * factorial(k - i)) * if (k - i).is_multiple_of(2) { 1.0 } else { -1.0 };
        acc = acc.add(&a.jet(p.shifted(i as f64), order).scale(C64::from(c)));
    }
    acc
}

/// `Σ c_i a_i`.
#[derive(Clone)]
pub struct LinearSymbol {
    pub terms: Vec<(C64, Arc<dyn Symbol>)>,
}

impl Symbol for LinearSymbol {
    fn jet(&self, p: Point, order: usize) -> CJet {
        self.terms.iter().fold(CJet::zero(order), |acc, (c, s)| acc.add(&s.jet(p, order).scale(*c)))
    }
    fn eval(&self, p: Point) -> C64 {
        self.terms.iter().map(|(c, s)| c * s.eval(p)).sum()
    }
    fn is_real(&self) -> bool {
        self.terms.iter().all(|(c, s)| c.im == 0.0 && s.is_real())
    }
    fn theta_independent(&self) -> bool {
        self.terms.iter().all(|(_, s)| s.theta_independent())
    }
    fn max_order(&self) -> usize {
        self.terms.iter().map(|(_, s)| s.max_order()).min().unwrap_or(MAX_ORDER)
    }
}

/// Poisson bracket `{a, b} = a_ξ b_x − a_x b_ξ + (Δ_η a) b_θ − a_θ (Δ_η b)`.
pub fn poisson_jet(a: &dyn Symbol, b: &dyn Symbol, p: Point, order: usize) -> CJet {
    let ja = a.jet(p, order + 1);
    let jb = b.jet(p, order + 1);
    let d = |j: &CJet, m| j.derivative(m);
    let mut pb = d(&ja, [0, 0, 1]).mul(&d(&jb, [1, 0, 0])).sub(&d(&ja, [1, 0, 0]).mul(&d(&jb, [0, 0, 1])));
    let a_free = a.theta_independent();
    let b_free = b.theta_independent();
    if !b_free {
        pb = pb.add(&eta_difference(a, p, order, 1).mul(&d(&jb, [0, 1, 0])));
    }
    if !a_free {
        pb = pb.sub(&d(&ja, [0, 1, 0]).mul(&eta_difference(b, p, order, 1)));
    }
    pb
}

/// The principal commutator symbol `(1/i){a, b}`.
#[derive(Clone)]
pub struct PoissonSymbol {
    pub a: Arc<dyn Symbol>,
    pub b: Arc<dyn Symbol>,
}

impl Symbol for PoissonSymbol {
    fn jet(&self, p: Point, order: usize) -> CJet {
        poisson_jet(&*self.a, &*self.b, p, order).scale(C64::new(0.0, -1.0))
    }
    fn is_real(&self) -> bool {
        false
    }
    fn theta_independent(&self) -> bool {
        self.a.theta_independent() && self.b.theta_independent()
    }
    fn max_order(&self) -> usize {
        self.a.max_order().min(self.b.max_order()).saturating_sub(1)
    }
}

/// Truncated composition expansion `Σ_{k≤N} (i^k/k!) A(D)^k a b |_diag`.
#[derive(Clone)]
pub struct ExpansionSymbol {
    pub a: Arc<dyn Symbol>,
    pub b: Arc<dyn Symbol>,
    pub n: usize,
}

/// Builds `a # b` to `N` terms; fails when the jets of `a`, `b` stop short of `N`.
pub fn compose_expand(a: Arc<dyn Symbol>, b: Arc<dyn Symbol>, n: usize) -> Result<ExpansionSymbol> {
    let available = a.max_order().min(b.max_order());
    if n > available {
        return Err(Error::OrderUnavailable { requested: n, available });
    }
    Ok(ExpansionSymbol { a, b, n })
}

impl Symbol for ExpansionSymbol {
    fn jet(&self, p: Point, order: usize) -> CJet {
        let n = self.n;
        let top = n + order;
        assert!(top <= MAX_ORDER, "expansion jet order exceeds {MAX_ORDER}");
        let a_free = self.a.theta_independent();
        let b_free = self.b.theta_independent();
        let da: Vec<CJet> = (0..=n).map(|k| eta_difference(&*self.a, p, top, k)).collect();
        let db: Vec<CJet> = (0..=n).map(|k| eta_difference(&*self.b, p, top, k)).collect();
        let mut acc = CJet::zero(order);
        for k in 0..=n {
            let ik = C64::new(0.0, 1.0).powu(k as u32) * (-0.5f64).powi(k as i32);
            for k1 in 0..=k {
                for k2 in 0..=(k - k1) {
                    for k3 in 0..=(k - k1 - k2) {
                        let k4 = k - k1 - k2 - k3;
                        // ∂_θ^{k4} a and ∂_θ^{k3} b vanish for θ-free factors
                        if (a_free && k4 > 0) || (b_free && k3 > 0) {
                            continue;
                        }
                        let sign = if (k2 + k4) % 2 == 0 { 1.0 } else { -1.0 };
                        let denom = factorial(k1) * factorial(k2) * factorial(k3) * factorial(k4);
                        let ta = da[k3].derivative([k2, k4, k1]).truncate(order);
                        let tb = db[k4].derivative([k1, k3, k2]).truncate(order);
                        acc = acc.add(&ta.mul(&tb).scale(ik * (sign / denom)));
                    }
                }
            }
        }
        acc
    }
    fn is_real(&self) -> bool {
        false
    }
    fn theta_independent(&self) -> bool {
        self.a.theta_independent() && self.b.theta_independent()
    }
    fn max_order(&self) -> usize {
        self.a.max_order().min(self.b.max_order()).saturating_sub(self.n)
    }
}

/// A linear operator on fields of one grid: matrix-free apply plus an optional dense matrix.
#[derive(Clone)]
pub struct OperatorHandle {
    grid: Grid,
    apply: Arc<dyn Fn(&[C64]) -> Vec<C64> + Send + Sync>,
    dense: Option<Arc<DMatrix<C64>>>,
    hermitian_hint: bool,
}

impl std::fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("grid", &self.grid)
            .field("dense", &self.dense.is_some())
            .field("hermitian_hint", &self.hermitian_hint)
            .finish()
    }
}

fn dense_apply(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    let out = m * DVector::from_column_slice(v);
    out.as_slice().to_vec()
}

impl OperatorHandle {
    pub fn new(grid: &Grid, hermitian_hint: bool, f: impl Fn(&[C64]) -> Vec<C64> + Send + Sync + 'static) -> Self {
        OperatorHandle { grid: grid.clone(), apply: Arc::new(f), dense: None, hermitian_hint }
    }

    pub fn from_dense(grid: &Grid, m: DMatrix<C64>, hermitian_hint: bool) -> Self {
        assert_eq!(m.nrows(), grid.len());
        let m = Arc::new(m);
        let mm = m.clone();
        OperatorHandle {
            grid: grid.clone(),
            apply: Arc::new(move |v| dense_apply(&mm, v)),
            dense: Some(m),
            hermitian_hint,
        }
    }

    pub fn identity(grid: &Grid) -> Self {
        OperatorHandle::new(grid, true, |v| v.to_vec())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn hermitian_hint(&self) -> bool {
        self.hermitian_hint
    }
    pub fn dense(&self) -> Option<&DMatrix<C64>> {
        self.dense.as_deref()
    }

    pub fn apply(&self, u: &Field) -> Field {
        debug_assert_eq!(u.grid(), &self.grid);
        u.with_data((self.apply)(u.data()))
    }

    pub fn apply_raw(&self, v: &[C64]) -> Vec<C64> {
        (self.apply)(v)
    }

    /// Dense matrix (built column by column from the matrix-free apply if needed).
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<C64>> {
        if let Some(m) = &self.dense {
            return Ok((**m).clone());
        }
        let n = self.grid.len();
        if n > cap {
            return Err(Error::GridTooLarge { dim: n, cap });
        }
        let cols: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![C64::default(); n];
                e[j] = C64::from(1.0);
                (self.apply)(&e)
            })
            .collect();
        Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
    }

    /// The same operator with a dense realization attached.
    pub fn with_dense(self, cap: usize) -> Result<Self> {
        let m = self.to_dense(cap)?;
        Ok(OperatorHandle { dense: Some(Arc::new(m)), ..self })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &OperatorHandle) -> Self {
        let (a, b) = (self.apply.clone(), other.apply.clone());
        OperatorHandle::new(&self.grid, false, move |v| a(&b(v)))
    }

    pub fn add(&self, other: &OperatorHandle) -> Self {
        self.lin(other, C64::from(1.0))
    }

    pub fn sub(&self, other: &OperatorHandle) -> Self {
        self.lin(other, C64::from(-1.0))
    }

    fn lin(&self, other: &OperatorHandle, c: C64) -> Self {
        let (a, b) = (self.apply.clone(), other.apply.clone());
        let herm = self.hermitian_hint && other.hermitian_hint && c.im == 0.0;
        OperatorHandle::new(&self.grid, herm, move |v| {
            let mut x = a(v);
            x.iter_mut().zip(b(v)).for_each(|(p, q)| *p += c * q);
            x
        })
    }

    pub fn scale(&self, c: C64) -> Self {
        let a = self.apply.clone();
        let herm = self.hermitian_hint && c.im == 0.0;
        OperatorHandle::new(&self.grid, herm, move |v| a(v).into_iter().map(|x| x * c).collect())
    }

    /// `[self, other] = self ∘ other − other ∘ self`.
    pub fn commutator(&self, other: &OperatorHandle) -> Self {
        self.compose(other).sub(&other.compose(self))
    }
}

/// Dense Weyl quantization with the default cap.
pub fn quantize(a: &dyn Symbol, grid: &Grid) -> Result<OperatorHandle> {
    quantize_capped(a, grid, DEFAULT_DENSE_CAP)
}

pub fn quantize_capped(a: &dyn Symbol, grid: &Grid, cap: usize) -> Result<OperatorHandle> {
    let n = grid.len();
    if n > cap {
        return Err(Error::GridTooLarge { dim: n, cap });
    }
    let m = if a.theta_independent() { dense_block_diagonal(a, grid) } else { dense_full(a, grid) };
    Ok(OperatorHandle::from_dense(grid, m, a.is_real()))
}

/// `N_x × N_x` Weyl matrix of a θ-independent symbol on the angular mode `η`.
pub fn quantize_mode(a: &dyn Symbol, grid: &Grid, eta: f64) -> DMatrix<C64> {
    let nx = grid.nx();
    let h = grid.hx();
    let l = grid.l();
    let plan = FftPlanner::new().plan_fft_inverse(nx);
    let xis = grid.xis();
    let rows: Vec<Vec<C64>> = (0..2 * nx - 1)
        .into_par_iter()
        .map(|s| {
            let mid = -l + s as f64 * h / 2.0;
            let mut v: Vec<C64> = xis.iter().map(|&xi| a.eval(Point::new(mid, 0.0, xi, eta))).collect();
            plan.process(&mut v);
            v.iter_mut().for_each(|z| *z /= nx as f64);
            v
        })
        .collect();
    DMatrix::from_fn(nx, nx, |j, k| rows[j + k][(j + nx - k) % nx])
}

fn dense_block_diagonal(a: &dyn Symbol, grid: &Grid) -> DMatrix<C64> {
    let (nx, nt) = (grid.nx(), grid.ntheta());
    let blocks: Vec<DMatrix<C64>> = grid.etas().iter().map(|&eta| quantize_mode(a, grid, eta)).collect();
    let offsets: Vec<f64> = grid.etas().iter().map(|&e| e - grid.eta_carrier() as f64).collect();
    let th = grid.thetas();
    // angular kernel e^{iq(θ_l − θ_l')}/N_θ for each (l − l') and q
    let mut phase = vec![vec![C64::default(); nt]; nt];
    for (dl, row) in phase.iter_mut().enumerate() {
        for (q, v) in row.iter_mut().enumerate() {
            *v = C64::from_polar(1.0 / nt as f64, offsets[q] * th[dl]);
        }
    }
    let mut m = DMatrix::zeros(nx * nt, nx * nt);
    for l in 0..nt {
        for lp in 0..nt {
            let ph = &phase[(l + nt - lp) % nt];
            for k in 0..nx {
                for j in 0..nx {
                    let mut acc = C64::default();
                    for (q, b) in blocks.iter().enumerate() {
                        acc += ph[q] * b[(j, k)];
                    }
                    m[(l * nx + j, lp * nx + k)] = acc;
                }
            }
        }
    }
    m
}

fn dense_full(a: &dyn Symbol, grid: &Grid) -> DMatrix<C64> {
    let (nx, nt) = (grid.nx(), grid.ntheta());
    let (hx, ht, l) = (grid.hx(), grid.htheta(), grid.l());
    let n = nx * nt;
    let parts: Vec<Vec<(usize, usize, C64)>> = (0..2 * nx - 1)
        .into_par_iter()
        .map(|sx| {
            let mx = -l + sx as f64 * hx / 2.0;
            let mut out = Vec::new();
            for st in 0..2 * nt - 1 {
                let mt = st as f64 * ht / 2.0;
                let mut table = Vec::with_capacity(n);
                for &eta in grid.etas() {
                    for &xi in grid.xis() {
                        table.push(a.eval(Point::new(mx, mt, xi, eta)));
                    }
                }
                grid.fft_x(&mut table, true);
                grid.fft_theta(&mut table, true);
                let jr = sx.saturating_sub(nx - 1)..=sx.min(nx - 1);
                let lr = st.saturating_sub(nt - 1)..=st.min(nt - 1);
                for j in jr {
                    let k = sx - j;
                    for li in lr.clone() {
                        let lp = st - li;
                        let v = table[((li + nt - lp) % nt) * nx + (j + nx - k) % nx];
                        out.push((li * nx + j, lp * nx + k, v));
                    }
                }
            }
            out
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for part in parts {
        for (r, c, v) in part {
            m[(r, c)] = v;
        }
    }
    m
}

/// Largest singular value by power iteration on `M†M`.
pub fn power_norm(n: usize, mtm: impl Fn(&[C64]) -> Vec<C64>, iters: usize, tol: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rand::Rng::sample(&mut rng, StandardNormal), rand::Rng::sample(&mut rng, StandardNormal)))
        .collect();
    let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = mtm(&v);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let change = (nw - lambda).abs();
        lambda = nw;
        v = w.into_iter().map(|z| z / nw).collect();
        if change <= tol * lambda {
            break;
        }
    }
    lambda.sqrt()
}

pub const NORM_ITERS: usize = 200;
pub const NORM_TOL: f64 = 1e-8;

/// Operator norm estimate (ℓ² on grid values).
pub fn operator_norm(op: &OperatorHandle) -> f64 {
    let n = op.grid().len();
    if let Some(m) = op.dense() {
        let mtm = m.adjoint() * m;
        return power_norm(n, |v| dense_apply(&mtm, v), NORM_ITERS, NORM_TOL, 0);
    }
    if op.hermitian_hint() {
        return power_norm(n, |v| op.apply_raw(&op.apply_raw(v)), NORM_ITERS, NORM_TOL, 0);
    }
    let m = op.to_dense(DEFAULT_DENSE_CAP).expect("operator too large for a norm estimate");
    let mtm = m.adjoint() * &m;
    power_norm(n, |v| dense_apply(&mtm, v), NORM_ITERS, NORM_TOL, 0)
}

/// Norm of `M` restricted to the column space of an orthonormal `U`, given `MU`.
pub fn restricted_norm(mu: &DMatrix<C64>) -> f64 {
    let g = mu.adjoint() * mu;
    power_norm(g.nrows(), |v| dense_apply(&g, v), NORM_ITERS, NORM_TOL, 0)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::from(0.5);
    h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Interior test subspace: Gaussian-windowed plane waves on one x-line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorSubspace {
    /// Window width as a fraction of `L`.
    pub sigma_frac: f64,
    /// Plane-wave band as a fraction of `ξ_max`.
    pub xi_frac: f64,
    /// Gram eigenvalues below this fraction of the largest are dropped.
    pub rel_threshold: f64,
}

impl Default for InteriorSubspace {
    fn default() -> Self {
        InteriorSubspace { sigma_frac: 0.125, xi_frac: 1.0 / 3.0, rel_threshold: 1e-6 }
    }
}

impl InteriorSubspace {
    /// `N_x × d` matrix with ℓ²-orthonormal columns.
    pub fn basis(&self, grid: &Grid) -> DMatrix<C64> {
        let sigma = self.sigma_frac * grid.l();
        let kmax = self.xi_frac * grid.xi_max();
        let freqs: Vec<f64> = grid.xis().iter().cloned().filter(|k| k.abs() <= kmax).collect();
        let nx = grid.nx();
        let c = DMatrix::from_fn(nx, freqs.len(), |j, k| {
            let x = grid.xs()[j];
            C64::from_polar((-x * x / (2.0 * sigma * sigma)).exp(), freqs[k] * x)
        });
        let gram = c.adjoint() * &c;
        let eig = gram.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..freqs.len()).filter(|&i| eig.eigenvalues[i] >= self.rel_threshold * lmax).collect();
        let v = DMatrix::from_fn(freqs.len(), keep.len(), |r, k| {
            eig.eigenvectors[(r, keep[k])] / eig.eigenvalues[keep[k]].sqrt()
        });
        c * v
    }
}

/// Residuals of the commutator calculus on a band of angular modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorResidual {
    /// Lower end `H` of the block `η ∈ [H, 2H]`, if a block was requested.
    pub h: Option<i64>,
    /// `‖a^w b^w − (ab + (1/2i){a,b})^w‖` on the block.
    pub resid_1: f64,
    /// `‖[a^w, b^w] − ((1/i){a,b})^w‖` on the block.
    pub resid_poisson: f64,
    pub commutator_norm: f64,
    pub poisson_norm: f64,
}

impl CommutatorResidual {
    pub fn relative(&self) -> f64 {
        self.resid_poisson / self.poisson_norm
    }
}

/// Commutator residuals over all angular modes of the grid.
pub fn commutator_residual(a: Arc<dyn Symbol>, b: Arc<dyn Symbol>, grid: &Grid) -> Result<CommutatorResidual> {
    let sub = InteriorSubspace::default();
    if a.theta_independent() && b.theta_independent() {
        let etas = grid.etas().to_vec();
        return Ok(residual_on_modes(a, b, grid, &etas, sub, None));
    }
    residual_full(a, b, grid, None, sub)
}

/// Commutator residuals restricted to `η ∈ [H, 2H]`.
///
/// θ-independent pairs are block diagonal and are evaluated mode by mode
/// without any angular grid; other pairs use the full dense quantization on
/// `grid`, whose angular lattice must contain the block.
pub fn commutator_residual_block(a: Arc<dyn Symbol>, b: Arc<dyn Symbol>, grid: &Grid, h: i64, sub: InteriorSubspace) -> Result<CommutatorResidual> {
    if a.theta_independent() && b.theta_independent() {
        let etas: Vec<f64> = (h..=2 * h).map(|e| e as f64).collect();
        return Ok(residual_on_modes(a, b, grid, &etas, sub, Some(h)));
    }
    residual_full(a, b, grid, Some(h), sub)
}

fn residual_on_modes(a: Arc<dyn Symbol>, b: Arc<dyn Symbol>, grid: &Grid, etas: &[f64], sub: InteriorSubspace, h: Option<i64>) -> CommutatorResidual {
    let u = sub.basis(grid);
    let pois = PoissonSymbol { a: a.clone(), b: b.clone() };
    let comp = ExpansionSymbol { a: a.clone(), b: b.clone(), n: 1 };
    let per: Vec<[f64; 4]> = etas
        .par_iter()
        .map(|&eta| {
            let am = quantize_mode(&*a, grid, eta);
            let bm = quantize_mode(&*b, grid, eta);
            let pm = quantize_mode(&pois, grid, eta);
            let cm = quantize_mode(&comp, grid, eta);
            let au = &am * &u;
            let bu = &bm * &u;
            let abu = &am * &bu;
            let comm = &abu - &bm * &au;
            let pu = &pm * &u;
            let r1 = &abu - &cm * &u;
            [restricted_norm(&r1), restricted_norm(&(&comm - &pu)), restricted_norm(&comm), restricted_norm(&pu)]
        })
        .collect();
    let mx = |i: usize| per.iter().map(|r| r[i]).fold(0.0, f64::max);
    CommutatorResidual { h, resid_1: mx(0), resid_poisson: mx(1), commutator_norm: mx(2), poisson_norm: mx(3) }
}

fn residual_full(a: Arc<dyn Symbol>, b: Arc<dyn Symbol>, grid: &Grid, h: Option<i64>, sub: InteriorSubspace) -> Result<CommutatorResidual> {
    let am = quantize(&*a, grid)?;
    let bm = quantize(&*b, grid)?;
    let pm = quantize(&PoissonSymbol { a: a.clone(), b: b.clone() }, grid)?;
    let cm = quantize(&ExpansionSymbol { a, b, n: 1 }, grid)?;
    let ux = sub.basis(grid);
    let (nx, nt) = (grid.nx(), grid.ntheta());
    let modes: Vec<usize> = (0..nt)
        .filter(|&q| match h {
            Some(h) => {
                let e = grid.etas()[q];
                e >= h as f64 && e <= 2.0 * h as f64
            }
            None => true,
        })
        .collect();
    if modes.is_empty() {
        return Err(Error::InvalidInput("angular lattice does not meet the requested block".into()));
    }
    let d = ux.ncols();
    let off = |q: usize| grid.etas()[q] - grid.eta_carrier() as f64;
    let u = DMatrix::from_fn(nx * nt, d * modes.len(), |r, c| {
        let (l, j) = (r / nx, r % nx);
        let (mi, k) = (c / d, c % d);
        C64::from_polar(1.0 / (nt as f64).sqrt(), off(modes[mi]) * grid.thetas()[l]) * ux[(j, k)]
    });
    let (a, b, p, c) = (am.dense().unwrap(), bm.dense().unwrap(), pm.dense().unwrap(), cm.dense().unwrap());
    let bu = b * &u;
    let abu = a * &bu;
    let comm = &abu - b * (a * &u);
    let pu = p * &u;
    let r1 = &abu - c * &u;
    Ok(CommutatorResidual {
        h,
        resid_1: restricted_norm(&r1),
        resid_poisson: restricted_norm(&(&comm - &pu)),
        commutator_norm: restricted_norm(&comm),
        poisson_norm: restricted_norm(&pu),
    })
}

/// Sampling lattice of [`audit_symbol_class`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAuditConfig {
    pub xs: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Samples restricted to `|ξ| ≤ C|η|`.
    pub xi_ratio: f64,
    pub eta_max: f64,
    pub per_octave: usize,
}

impl Default for ClassAuditConfig {
    fn default() -> Self {
        ClassAuditConfig {
            xs: vec![-1.0, -0.5, -0.3, -0.15, -0.05, 0.0, 0.05, 0.15, 0.3, 0.5, 1.0],
            thetas: vec![0.0, 1.1, 2.3, PI, 4.4],
            xi_ratio: 1.0,
            eta_max: 16384.0,
            per_octave: 4,
        }
    }
}

/// Smallest sampled constant for one derivative multi-index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConstant {
    /// `(α, β, γ, δ)`: orders in `ξ`, `x`, `θ` and `η`-differences.
    pub index: [usize; 4],
    pub constant: f64,
    pub at: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolClassReport {
    pub passed: bool,
    pub m_sym: f64,
    pub rho: f64,
    pub constants: Vec<ClassConstant>,
}

fn audit_etas(cfg: &ClassAuditConfig) -> Vec<f64> {
    let mut v: Vec<f64> = (1..=16).map(|e| e as f64).collect();
    let mut e = 16.0f64;
    while e < cfg.eta_max {
        e *= 2f64.powf(1.0 / cfg.per_octave as f64);
        let r = e.round().min(cfg.eta_max);
        if r > *v.last().unwrap() {
            v.push(r);
        }
    }
    let neg: Vec<f64> = v.iter().map(|e| -e).collect();
    v.extend(neg);
    v
}

/// Samples the defining inequalities of `S^{m}_ρ` and reports constants.
///
/// Each ratio `|∂_ξ^α ∂_x^β ∂_θ^γ Δ_η^δ a| / (⟨ξ⟩^{m−αρ}⟨η⟩^{−δρ})` is maximized
/// per dyadic `|η|` shell; growth of more than 2× over the last three shells
/// is reported as a failure.
pub fn audit_symbol_class(a: &dyn Symbol, m_sym: f64, rho: f64, orders: usize) -> Result<SymbolClassReport> {
    audit_symbol_class_with(a, m_sym, rho, orders, &ClassAuditConfig::default())
}

pub fn audit_symbol_class_with(a: &dyn Symbol, m_sym: f64, rho: f64, orders: usize, cfg: &ClassAuditConfig) -> Result<SymbolClassReport> {
    if orders > a.max_order() {
        return Err(Error::OrderUnavailable { requested: orders, available: a.max_order() });
    }
    let thetas = if a.theta_independent() { vec![0.0] } else { cfg.thetas.clone() };
    let mut indices = Vec::new();
    for al in 0..=orders {
        for be in 0..=(orders - al) {
            for ga in 0..=(orders - al - be) {
                if ga > 0 && a.theta_independent() {
                    continue;
                }
                for de in 0..=(orders - al - be - ga) {
                    indices.push([al, be, ga, de]);
                }
            }
        }
    }
    let etas = audit_etas(cfg);
    let shell = |eta: f64| eta.abs().log2().floor() as usize;
    let nshell = shell(cfg.eta_max) + 1;
    let points: Vec<Point> = etas
        .iter()
        .flat_map(|&eta| {
            let cmax = cfg.xi_ratio * eta.abs();
            let mut xis = vec![0.0];
            for k in 0..24 {
                let v = cmax * 2f64.powf(-(k as f64) / 2.0);
                xis.push(v);
                xis.push(-v);
            }
            let thetas = &thetas;
            cfg.xs.iter().flat_map(move |&x| {
                let xis = xis.clone();
                thetas.iter().flat_map(move |&th| xis.clone().into_iter().map(move |xi| Point::new(x, th, xi, eta)))
            })
        })
        .collect();
    let max_delta = indices.iter().map(|i| i[3]).max().unwrap_or(0);
    // per point: ratio for every index
    let ratios: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&p| {
            let diffs: Vec<CJet> = (0..=max_delta).map(|d| eta_difference(a, p, orders, d)).collect();
            indices
                .iter()
                .map(|&[al, be, ga, de]| {
                    let v = diffs[de].partial([be, ga, al]).norm();
                    let w = (1.0 + p.xi * p.xi).powf((m_sym - al as f64 * rho) / 2.0)
                        * (1.0 + p.eta * p.eta).powf(-(de as f64) * rho / 2.0);
                    v / w
                })
                .collect()
        })
        .collect();
    let mut constants = Vec::new();
    for (ii, &idx) in indices.iter().enumerate() {
        let mut shell_max = vec![0.0f64; nshell];
        let mut best = (0.0f64, points[0]);
        for (pi, p) in points.iter().enumerate() {
            let r = ratios[pi][ii];
            let s = shell(p.eta).min(nshell - 1);
            if !r.is_finite() {
                return Err(Error::SymbolAuditFailed { what: format!("non-finite derivative {idx:?}"), x: p.x, xi: p.xi, eta: p.eta });
            }
            shell_max[s] = shell_max[s].max(r);
            if r > best.0 {
                best = (r, *p);
            }
        }
        let top = nshell - 1;
        if shell_max[top] > 1e-12 && shell_max[top] > 2.0 * shell_max[top - 3] {
            let w = best.1;
            return Err(Error::SymbolAuditFailed { what: format!("growth in derivative {idx:?}"), x: w.x, xi: w.xi, eta: w.eta });
        }
        constants.push(ClassConstant { index: idx, constant: best.0, at: best.1 });
    }
    Ok(SymbolClassReport { passed: true, m_sym, rho, constants })
}

/// Writes `rows, cols` (u64 LE) then row-major `(re, im)` f64 LE pairs.
pub fn write_dense(w: &mut impl Write, m: &DMatrix<C64>) -> io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dense(r: &mut impl Read) -> io::Result<DMatrix<C64>> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            m[(i, j)] = C64::new(re, f64::from_le_bytes(b8));
        }
    }
    Ok(m)
}
