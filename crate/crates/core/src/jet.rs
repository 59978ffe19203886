//! Truncated Taylor arithmetic.
//!
//! [`Series`] is a univariate truncated power series used to produce Taylor
//! coefficients of elementary functions at a point. [`Jet`] is a truncated
//! multivariate Taylor polynomial in the three phase-space variables
//! `(x, θ, ξ)`; the frequency `η` never enters a jet because it is discrete
//! and only ever differenced.
//!
//! Code that is written once against the [`Real`] trait runs both on plain
//! `f64` (fast value path) and on [`Jet`] (closed-form partial derivatives).

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Univariate truncated power series `Σ c_n t^n`, `n ≤ degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series(pub Vec<f64>);

impl Series {
    pub fn zero(degree: usize) -> Self {
        Series(vec![0.0; degree + 1])
    }

    pub fn constant(c: f64, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        s.0[0] = c;
        s
    }

    /// The series of `t0 + t`.
    pub fn variable(t0: f64, degree: usize) -> Self {
        let mut s = Self::constant(t0, degree);
        if degree > 0 {
            s.0[1] = 1.0;
        }
        s
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn mul(&self, other: &Series) -> Series {
        let d = self.degree();
        let mut out = Series::zero(d);
        for i in 0..=d {
            if self.0[i] == 0.0 {
                continue;
            }
            for j in 0..=(d - i) {
                out.0[i + j] += self.0[i] * other.0[j];
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Series {
        Series(self.0.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Series) -> Series {
        Series(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn recip(&self) -> Series {
        let d = self.degree();
        let a0 = self.0[0];
        let mut out = Series::zero(d);
        out.0[0] = 1.0 / a0;
        for n in 1..=d {
            let mut acc = 0.0;
            for k in 1..=n {
                acc += self.0[k] * out.0[n - k];
            }
            out.0[n] = -acc / a0;
        }
        out
    }

    /// `exp` by the standard recurrence `n b_n = Σ k a_k b_{n-k}`.
    pub fn exp(&self) -> Series {
        let d = self.degree();
        let mut out = Series::zero(d);
        out.0[0] = self.0[0].exp();
        for n in 1..=d {
            let mut acc = 0.0;
            for k in 1..=n {
                acc += k as f64 * self.0[k] * out.0[n - k];
            }
            out.0[n] = acc / n as f64;
        }
        out
    }

    /// `a^p` for `a_0 > 0` (J. C. P. Miller recurrence).
    pub fn powf(&self, p: f64) -> Series {
        let d = self.degree();
        let a0 = self.0[0];
        let mut out = Series::zero(d);
        out.0[0] = a0.powf(p);
        for n in 1..=d {
            let mut acc = 0.0;
            for k in 1..=n {
                acc += (p * k as f64 - (n - k) as f64) * self.0[k] * out.0[n - k];
            }
            out.0[n] = acc / (n as f64 * a0);
        }
        out
    }

    /// Antiderivative with constant term `c0`; the top coefficient is dropped.
    pub fn integrate(&self, c0: f64) -> Series {
        let d = self.degree();
        let mut out = Series::zero(d);
        out.0[0] = c0;
        for n in 1..=d {
            out.0[n] = self.0[n - 1] / n as f64;
        }
        out
    }
}

/// Taylor coefficients of elementary functions at a point.
pub mod taylor {
    use super::Series;

    pub fn exp(t: f64, d: usize) -> Vec<f64> {
        let e = t.exp();
        let mut c = vec![e; d + 1];
        let mut fact = 1.0;
        for (n, v) in c.iter_mut().enumerate().skip(1) {
            fact *= n as f64;
            *v = e / fact;
        }
        c
    }

    pub fn ln(t: f64, d: usize) -> Vec<f64> {
        let mut c = vec![t.ln(); d + 1];
        for (n, v) in c.iter_mut().enumerate().skip(1) {
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            *v = sign / (n as f64 * t.powi(n as i32));
        }
        c
    }

    /// `t^p`: binomial coefficients `C(p, n) t^{p-n}`.
    pub fn powf(t: f64, p: f64, d: usize) -> Vec<f64> {
        let mut c = vec![0.0; d + 1];
        let mut binom = 1.0;
        for (n, v) in c.iter_mut().enumerate() {
            if n > 0 {
                binom *= (p - (n - 1) as f64) / n as f64;
            }
            *v = binom * t.powf(p - n as f64);
        }
        c
    }

    pub fn sin_cos(t: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
        let (s, co) = t.sin_cos();
        let mut sc = vec![0.0; d + 1];
        let mut cc = vec![0.0; d + 1];
        let mut fact = 1.0;
        // derivatives cycle: sin, cos, -sin, -cos
        let ds = [s, co, -s, -co];
        let dc = [co, -s, -co, s];
        for n in 0..=d {
            if n > 0 {
                fact *= n as f64;
            }
            sc[n] = ds[n % 4] / fact;
            cc[n] = dc[n % 4] / fact;
        }
        (sc, cc)
    }

    /// `⟨t⟩^{-1-eps0} = (1+t^2)^{-(1+eps0)/2}` expanded around `t`.
    pub fn japanese_pow(t: f64, p: f64, d: usize) -> Vec<f64> {
        let mut q = Series::zero(d);
        q.0[0] = 1.0 + t * t;
        if d >= 1 {
            q.0[1] = 2.0 * t;
        }
        if d >= 2 {
            q.0[2] = 1.0;
        }
        q.powf(p / 2.0).0
    }

    pub fn atan(t: f64, d: usize) -> Vec<f64> {
        let deriv = japanese_pow(t, -2.0, d);
        Series(deriv).integrate(t.atan()).0
    }

    /// `e^{-1/t}` for `t > 0`, identically zero otherwise.
    pub fn flat_exp(t: f64, d: usize) -> Vec<f64> {
        if t <= 0.0 {
            return vec![0.0; d + 1];
        }
        let inv = Series(powf(t, -1.0, d)).scale(-1.0);
        inv.exp().0
    }
}

const NVARS: usize = 3;
pub const MAX_ORDER: usize = 16;

struct Layout {
    monomials: Vec<[u8; NVARS]>,
    /// (lhs, rhs, out) index triples with total degree within the order.
    products: Vec<(u16, u16, u16)>,
}

fn layout(order: usize) -> &'static Layout {
    static TABLES: OnceLock<Vec<Layout>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| (0..=MAX_ORDER).map(build_layout).collect());
    assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
    &tables[order]
}

fn build_layout(order: usize) -> Layout {
    let mut monomials = Vec::new();
    for total in 0..=order {
        for i in (0..=total).rev() {
            for j in (0..=(total - i)).rev() {
                let k = total - i - j;
                monomials.push([i as u8, j as u8, k as u8]);
            }
        }
    }
    let index_of = |m: [u8; NVARS]| monomials.iter().position(|v| *v == m);
    let mut products = Vec::new();
    for (a, ma) in monomials.iter().enumerate() {
        for (b, mb) in monomials.iter().enumerate() {
            let sum = [ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2]];
            if (sum[0] + sum[1] + sum[2]) as usize <= order {
                let out = index_of(sum).unwrap();
                products.push((a as u16, b as u16, out as u16));
            }
        }
    }
    Layout { monomials, products }
}

/// Index of a jet variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X = 0,
    Theta = 1,
    Xi = 2,
}

/// Truncated Taylor polynomial in `(x, θ, ξ)` of total degree `order`.
///
/// Coefficient of the monomial `dx^i dθ^j dξ^k` equals
/// `∂_x^i ∂_θ^j ∂_ξ^k f / (i! j! k!)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    order: usize,
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn constant(c: f64, order: usize) -> Self {
        let n = layout(order).monomials.len();
        let mut coeffs = vec![0.0; n];
        coeffs[0] = c;
        Jet { order, coeffs }
    }

    pub fn variable(var: Var, value: f64, order: usize) -> Self {
        let mut j = Self::constant(value, order);
        if order >= 1 {
            let mut m = [0u8; NVARS];
            m[var as usize] = 1;
            let idx = layout(order).monomials.iter().position(|v| *v == m).unwrap();
            j.coeffs[idx] = 1.0;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn index(&self, m: [usize; NVARS]) -> Option<usize> {
        if m.iter().sum::<usize>() > self.order {
            return None;
        }
        let key = [m[0] as u8, m[1] as u8, m[2] as u8];
        layout(self.order).monomials.iter().position(|v| *v == key)
    }

    /// Taylor coefficient of `dx^i dθ^j dξ^k` (zero beyond the order).
    pub fn coeff(&self, m: [usize; NVARS]) -> f64 {
        self.index(m).map_or(0.0, |i| self.coeffs[i])
    }

    /// Partial derivative `∂_x^i ∂_θ^j ∂_ξ^k` evaluated at the expansion point.
    pub fn partial(&self, m: [usize; NVARS]) -> f64 {
        let f: f64 = m.iter().map(|&n| factorial(n)).product();
        self.coeff(m) * f
    }

    /// Jet of a partial derivative, one order lower per differentiation.
    pub fn derivative(&self, m: [usize; NVARS]) -> Jet {
        let total: usize = m.iter().sum();
        assert!(total <= self.order, "derivative exceeds jet order");
        let new_order = self.order - total;
        let lay = layout(new_order);
        let coeffs = lay
            .monomials
            .iter()
            .map(|mono| {
                let src = [
                    mono[0] as usize + m[0],
                    mono[1] as usize + m[1],
                    mono[2] as usize + m[2],
                ];
                let mut scale = 1.0;
                for v in 0..NVARS {
                    for t in 0..m[v] {
                        scale *= (src[v] - t) as f64;
                    }
                }
                self.coeff(src) * scale
            })
            .collect();
        Jet { order: new_order, coeffs }
    }

    /// Drops terms above `order`.
    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order);
        let n = layout(order).monomials.len();
        Jet { order, coeffs: self.coeffs[..n].to_vec() }
    }

    /// `f(self)` given the univariate Taylor coefficients of `f` at `self.value()`.
    pub fn compose(&self, c: &[f64]) -> Jet {
        let d = self.order;
        let mut delta = self.clone();
        delta.coeffs[0] = 0.0;
        let mut acc = Jet::constant(c[d.min(c.len() - 1)], d);
        for n in (0..d.min(c.len() - 1)).rev() {
            acc = &acc * &delta;
            acc.coeffs[0] += c[n];
        }
        if d == 0 {
            acc.coeffs[0] = c[0];
        }
        acc
    }

    fn map_scalar(&self, f: impl Fn(f64) -> f64) -> Jet {
        Jet { order: self.order, coeffs: self.coeffs.iter().map(|&v| f(v)).collect() }
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

impl<'a> Mul<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &'a Jet) -> Jet {
        debug_assert_eq!(self.order, rhs.order);
        let lay = layout(self.order);
        let mut out = vec![0.0; self.coeffs.len()];
        for &(a, b, o) in &lay.products {
            out[o as usize] += self.coeffs[a as usize] * rhs.coeffs[b as usize];
        }
        Jet { order: self.order, coeffs: out }
    }
}

impl<'a> Add<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &'a Jet) -> Jet {
        Jet {
            order: self.order,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &'a Jet) -> Jet {
        Jet {
            order: self.order,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet { (&self).$m(&rhs) }
        }
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet { let c = Jet::constant(rhs, self.order); (&self).$m(&c) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul);

impl Div<Jet> for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        &self * &rhs.recip()
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self.map_scalar(|v| v / rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map_scalar(|v| -v)
    }
}

/// Scalar arithmetic shared by `f64` and [`Jet`].
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant with the same shape as `self`.
    fn cst(&self, c: f64) -> Self;
    fn val(&self) -> f64;
    /// Applies `f` given its Taylor coefficients at `self.val()` up to `degree`.
    fn compose_with(&self, coeffs: impl Fn(f64, usize) -> Vec<f64>) -> Self;
    fn degree(&self) -> usize;
    /// True when every coefficient vanishes.
    fn is_identically_zero(&self) -> bool;

    fn exp(&self) -> Self {
        self.compose_with(taylor::exp)
    }
    fn ln(&self) -> Self {
        self.compose_with(taylor::ln)
    }
    fn powf(&self, p: f64) -> Self {
        self.compose_with(|t, d| taylor::powf(t, p, d))
    }
    fn powi(&self, n: u32) -> Self {
        let mut acc = self.cst(1.0);
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn recip(&self) -> Self {
        self.powf(-1.0)
    }
    fn atan(&self) -> Self {
        self.compose_with(taylor::atan)
    }
    fn sin(&self) -> Self {
        self.compose_with(|t, d| taylor::sin_cos(t, d).0)
    }
    fn cos(&self) -> Self {
        self.compose_with(|t, d| taylor::sin_cos(t, d).1)
    }
    /// `(1 + t^2)^{p/2}`.
    fn japanese(&self, p: f64) -> Self {
        self.compose_with(|t, d| taylor::japanese_pow(t, p, d))
    }
    /// `e^{-1/t}` for `t > 0`, zero otherwise; all derivatives vanish at 0.
    fn flat_exp(&self) -> Self {
        self.compose_with(taylor::flat_exp)
    }
}

impl Real for f64 {
    fn cst(&self, c: f64) -> Self {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn compose_with(&self, coeffs: impl Fn(f64, usize) -> Vec<f64>) -> Self {
        coeffs(*self, 0)[0]
    }
    fn degree(&self) -> usize {
        0
    }
    fn is_identically_zero(&self) -> bool {
        *self == 0.0
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn powi(&self, n: u32) -> Self {
        f64::powi(*self, n as i32)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn atan(&self) -> Self {
        f64::atan(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn japanese(&self, p: f64) -> Self {
        (1.0 + self * self).powf(p / 2.0)
    }
    fn flat_exp(&self) -> Self {
        if *self > 0.0 {
            f64::exp(-1.0 / *self)
        } else {
            0.0
        }
    }
}

impl Real for Jet {
    fn cst(&self, c: f64) -> Self {
        Jet::constant(c, self.order)
    }
    fn val(&self) -> f64 {
        self.value()
    }
    fn compose_with(&self, coeffs: impl Fn(f64, usize) -> Vec<f64>) -> Self {
        self.compose(&coeffs(self.value(), self.order))
    }
    fn degree(&self) -> usize {
        self.order
    }
    fn is_identically_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
    fn powi(&self, n: u32) -> Self {
        let mut acc = self.cst(1.0);
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }
}

/// Smooth step: 0 for `t ≤ 0`, 1 for `t ≥ 1`, built from `e^{-1/t}`.
pub fn smooth_step<S: Real>(t: &S) -> S {
    let a = t.flat_exp();
    let one_minus = t.cst(1.0) - t.clone();
    let b = one_minus.flat_exp();
    if b.val() == 0.0 {
        return t.cst(1.0);
    }
    if a.val() == 0.0 {
        return t.cst(0.0);
    }
    a.clone() / (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn univariate_elementary_coefficients() {
        let t = 0.7;
        let d = 5;
        let e = taylor::exp(t, d);
        assert!((e[3] - t.exp() / 6.0).abs() < 1e-14);
        let a = taylor::atan(t, d);
        assert!((a[1] - 1.0 / (1.0 + t * t)).abs() < 1e-14);
        assert!((a[2] * 2.0 - (-2.0 * t / (1.0 + t * t).powi(2))).abs() < 1e-13);
        let p = taylor::powf(t, 2.5, d);
        assert!((p[2] - 2.5 * 1.5 / 2.0 * t.powf(0.5)).abs() < 1e-14);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let f = |x: Jet, th: Jet, xi: Jet| -> Jet {
            (x.clone() * xi.clone()).exp() * th.cos() + x.atan() * xi.japanese(-3.0)
        };
        let (x0, t0, k0) = (0.3, 1.1, -0.4);
        let j = f(
            Jet::variable(Var::X, x0, 3),
            Jet::variable(Var::Theta, t0, 3),
            Jet::variable(Var::Xi, k0, 3),
        );
        let scalar = |x: f64, th: f64, xi: f64| (x * xi).exp() * th.cos() + x.atan() * (1.0 + xi * xi).powf(-1.5);
        let dx = fd(|x| scalar(x, t0, k0), x0, 1e-3);
        assert!((j.partial([1, 0, 0]) - dx).abs() < 1e-9);
        let dxi = fd(|k| scalar(x0, t0, k), k0, 1e-3);
        assert!((j.partial([0, 0, 1]) - dxi).abs() < 1e-9);
        let dxdxi = fd(|k| fd(|x| scalar(x, t0, k), x0, 1e-3), k0, 1e-3);
        assert!((j.partial([1, 0, 1]) - dxdxi).abs() < 1e-6);
        // derivative jet consistency
        let dj = j.derivative([1, 0, 0]);
        assert!((dj.partial([0, 0, 1]) - j.partial([1, 0, 1])).abs() < 1e-12);
    }

    #[test]
    fn smooth_step_is_flat_at_ends() {
        let lo = smooth_step(&Jet::variable(Var::X, 0.0, 4));
        assert!(lo.coeffs().iter().all(|&c| c == 0.0));
        let hi = smooth_step(&Jet::variable(Var::X, 1.0, 4));
        assert_eq!(hi.value(), 1.0);
        assert!((smooth_step(&0.5f64) - 0.5).abs() < 1e-15);
    }
}
