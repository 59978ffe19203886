//! Concrete operators in the conjugated frame: `Δ̃`, `Q`, `R`, the commutant
//! `B`, the frequency splitter and the microlocalizer.
//!
//! All production operators are matrix-free: spectral derivatives composed
//! with pointwise multiplications sampled on the grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{audit_derivative_condition, potential_v1, profile_a_inv_sq, AuditReport, SurfaceSpec};
use crate::grid::{apply_multiplier, Field, Grid, C64};
use crate::jet::{smooth_step, Jet, Real, Var};
use crate::special;
use crate::weyl::{quantize, Expr, ExprSymbol, OperatorHandle};

/// Phase-space window `δ`, frequency floor `M`, calculus gain `ε`, and `Λ` exponent `ε₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub delta: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub eps: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
}

fn default_eps0() -> f64 {
    1.0
}

impl CutoffSpec {
    pub fn new(delta: f64, m: f64, eps: f64) -> Self {
        CutoffSpec { delta, m, eps, eps0: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1/2], got {}", self.delta)));
        }
        if !(self.m >= 1.0) {
            return Err(Error::InvalidInput(format!("M must be at least 1, got {}", self.m)));
        }
        if !(self.eps > 0.0) || !(self.eps0 > 0.0) {
            return Err(Error::InvalidInput("eps and eps0 must be positive".into()));
        }
        Ok(())
    }

    /// `χ(t; δ)`.
    pub fn chi(&self, t: f64) -> f64 {
        special::cutoff(&t, self.delta)
    }

    /// `χ̃(t; M)`.
    pub fn chi_tilde(&self, t: f64) -> f64 {
        special::high_pass(&t, self.m)
    }
}

/// A surface spec together with the outcome of its derivative-condition audit.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    spec: SurfaceSpec,
    audit: Option<AuditReport>,
}

pub const DEFAULT_AUDIT_WINDOW: f64 = 1.0;
pub const DEFAULT_AUDIT_SAMPLES: usize = 4096;

impl Surface {
    /// Wraps a spec without auditing it; operator assembly will refuse it.
    pub fn unaudited(spec: SurfaceSpec) -> Self {
        Surface { spec, audit: None }
    }

    /// Runs the derivative-condition audit with the default sampling.
    pub fn audited(spec: SurfaceSpec) -> Result<Self> {
        let report = audit_derivative_condition(&spec.f, spec.m, DEFAULT_AUDIT_WINDOW, DEFAULT_AUDIT_SAMPLES)?;
        Surface::with_report(spec, report)
    }

    pub fn with_report(spec: SurfaceSpec, report: AuditReport) -> Result<Self> {
        if !report.passed {
            let (j, k, x, theta) = report.worst;
            return Err(Error::AuditFailed { j, k, x, theta });
        }
        Ok(Surface { spec, audit: Some(report) })
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    pub fn audit(&self) -> Option<&AuditReport> {
        self.audit.as_ref()
    }

    pub fn require_audit(&self) -> Result<&AuditReport> {
        self.audit.as_ref().ok_or(Error::AuditRequired)
    }
}

/// Commutant coefficient: `arctan x` flattened to zero in the outer margin.
///
/// The taper runs over `[x₀, x₀ + ¾(L − x₀)]` with `x₀ = max(L − 2, L/2)`, so the
/// coefficient is smooth across the periodic seam.
pub fn commutant_coefficient<S: Real>(x: &S, l: f64) -> S {
    let (x0, x1) = taper_window(l);
    let v = x.val().abs();
    let at = x.atan();
    if v <= x0 {
        return at;
    }
    if v >= x1 {
        return x.cst(0.0);
    }
    let ax = if x.val() < 0.0 { -x.clone() } else { x.clone() };
    at * (x.cst(1.0) - smooth_step(&((ax - x0) / (x1 - x0))))
}

fn taper_window(l: f64) -> (f64, f64) {
    let x0 = (l - 2.0).max(l / 2.0);
    (x0, x0 + 0.75 * (l - x0))
}

/// Sampled coefficient fields of one surface on one grid.
#[derive(Debug)]
struct Coefficients {
    grid: Grid,
    /// `e^{-sf}`, θ-major.
    e: Vec<f64>,
    /// `e^{-sf/2}`.
    h: Vec<f64>,
    /// `∂_x e^{-sf}`.
    e_x: Vec<f64>,
    /// `A^{-2}` and its derivative, per x.
    a2: Vec<f64>,
    da2: Vec<f64>,
    v1: Vec<f64>,
    /// `R = p₁∂_x + p₂∂_θ + p₀` and x-derivatives of the coefficients.
    p1: Vec<f64>,
    p2: Vec<f64>,
    p0: Vec<f64>,
    p1x: Vec<f64>,
    p2x: Vec<f64>,
    p0x: Vec<f64>,
    /// Commutant coefficient `β` and `β'`, `β''`, per x.
    beta: Vec<f64>,
    dbeta: Vec<f64>,
    ddbeta: Vec<f64>,
    perturbed: bool,
}

impl Coefficients {
    fn new(spec: &SurfaceSpec, grid: &Grid) -> Self {
        let m = spec.m;
        let n = grid.len();
        let mut c = Coefficients {
            grid: grid.clone(),
            e: vec![1.0; n],
            h: vec![1.0; n],
            e_x: vec![0.0; n],
            a2: grid.sample_x(|x| profile_a_inv_sq(&x, m)),
            da2: Vec::new(),
            v1: grid.sample_x(|x| potential_v1(&x, m)),
            p1: vec![0.0; n],
            p2: vec![0.0; n],
            p0: vec![0.0; n],
            p1x: vec![0.0; n],
            p2x: vec![0.0; n],
            p0x: vec![0.0; n],
            beta: Vec::new(),
            dbeta: Vec::new(),
            ddbeta: Vec::new(),
            perturbed: spec.s != 0.0 && !spec.f.is_zero(),
        };
        c.da2 = grid.sample_x(|x| profile_a_inv_sq(&Jet::variable(Var::X, x, 1), m).partial([1, 0, 0]));
        let bj: Vec<Jet> = grid.xs().iter().map(|&x| commutant_coefficient(&Jet::variable(Var::X, x, 2), grid.l())).collect();
        c.beta = bj.iter().map(|j| j.value()).collect();
        c.dbeta = bj.iter().map(|j| j.partial([1, 0, 0])).collect();
        c.ddbeta = bj.iter().map(|j| j.partial([2, 0, 0])).collect();
        if !c.perturbed {
            return c;
        }
        for (it, &t) in grid.thetas().iter().enumerate() {
            for (ix, &x) in grid.xs().iter().enumerate() {
                let i = grid.index(ix, it);
                let f = spec.sf(&Jet::variable(Var::X, x, 3), &Jet::variable(Var::Theta, t, 3));
                let fx = f.derivative([1, 0, 0]).truncate(1);
                let ft = f.derivative([0, 1, 0]).truncate(1);
                let fxx = f.derivative([2, 0, 0]);
                let ftt = f.derivative([0, 2, 0]);
                let e = (-f.truncate(1)).exp();
                let a = profile_a_inv_sq(&Jet::variable(Var::X, x, 1), m);
                let p1 = &e * &fx;
                let p2 = &(&e * &a) * &ft;
                let inner = fxx * 0.5 - &fx * &fx * 0.25 + &a * &(ftt * 0.5 - &ft * &ft * 0.25);
                let p0 = &e * &inner;
                c.e[i] = e.value();
                c.h[i] = (-0.5 * f.value()).exp();
                c.e_x[i] = e.partial([1, 0, 0]);
                c.p1[i] = p1.value();
                c.p2[i] = p2.value();
                c.p0[i] = p0.value();
                c.p1x[i] = p1.partial([1, 0, 0]);
                c.p2x[i] = p2.partial([1, 0, 0]);
                c.p0x[i] = p0.partial([1, 0, 0]);
            }
        }
        c
    }

    fn nx(&self) -> usize {
        self.grid.nx()
    }

    /// `(∂_x² + A^{-2}∂_θ²)v`.
    fn laplacian(&self, v: &[C64]) -> Vec<C64> {
        let mut out = self.grid.dxx(v);
        let tt = self.grid.dthetatheta(v);
        let nx = self.nx();
        for (i, (o, t)) in out.iter_mut().zip(tt).enumerate() {
            *o += t * self.a2[i % nx];
        }
        out
    }

    fn tilde_laplacian(&self, u: &[C64]) -> Vec<C64> {
        let nx = self.nx();
        let hu: Vec<C64> = u.iter().zip(&self.h).map(|(v, h)| v * h).collect();
        let mut w = self.laplacian(&hu);
        for (i, x) in w.iter_mut().enumerate() {
            *x = (*x - hu[i] * self.v1[i % nx]) * self.h[i];
        }
        w
    }

    fn r(&self, u: &[C64]) -> Vec<C64> {
        if !self.perturbed {
            return vec![C64::default(); u.len()];
        }
        let ux = self.grid.dx(u);
        let ut = self.grid.dtheta(u);
        (0..u.len()).map(|i| ux[i] * self.p1[i] + ut[i] * self.p2[i] + u[i] * self.p0[i]).collect()
    }

    /// `−e^{-sf}(∂_x² + A^{-2}∂_θ²)u + Ru`.
    fn q_product(&self, u: &[C64]) -> Vec<C64> {
        let lap = self.laplacian(u);
        let r = self.r(u);
        lap.iter().zip(&self.e).zip(r).map(|((l, e), r)| -l * e + r).collect()
    }

    /// `−Δ̃u − e^{-sf}V₁u`.
    fn q_symmetric(&self, u: &[C64]) -> Vec<C64> {
        let nx = self.nx();
        let t = self.tilde_laplacian(u);
        t.iter().enumerate().map(|(i, t)| -t - u[i] * (self.e[i] * self.v1[i % nx])).collect()
    }

    fn b(&self, u: &[C64]) -> Vec<C64> {
        let nx = self.nx();
        self.grid.dx(u).into_iter().enumerate().map(|(i, v)| v * self.beta[i % nx]).collect()
    }

    /// `[Q, B]` from the product-rule formula, `[R, B]` included.
    fn commutator_expansion(&self, u: &[C64]) -> Vec<C64> {
        let nx = self.nx();
        let g = &self.grid;
        let ux = g.dx(u);
        let uxx = g.dxx(u);
        let ut = g.dtheta(u);
        let utt = g.dthetatheta(u);
        (0..u.len())
            .map(|i| {
                let k = i % nx;
                let (b, db, ddb) = (self.beta[k], self.dbeta[k], self.ddbeta[k]);
                let a = self.a2[k];
                let main = -(uxx[i] * (2.0 * db) + ux[i] * ddb - utt[i] * (b * self.da2[k])) * self.e[i]
                    + (uxx[i] + utt[i] * a) * (b * self.e_x[i]);
                let lower = ux[i] * (self.p1[i] * db - b * self.p1x[i]) - ut[i] * (b * self.p2x[i]) - u[i] * (b * self.p0x[i]);
                main + lower
            })
            .collect()
    }
}

fn handle(grid: &Grid, hermitian: bool, c: &Arc<Coefficients>, f: fn(&Coefficients, &[C64]) -> Vec<C64>) -> OperatorHandle {
    let c = c.clone();
    OperatorHandle::new(grid, hermitian, move |v| f(&c, v))
}

/// `Δ̃ = e^{-sf/2}(∂_x² + A^{-2}∂_θ² − V₁)e^{-sf/2}`.
pub fn assemble_tilde_laplacian(surface: &Surface, grid: &Grid) -> Result<OperatorHandle> {
    surface.require_audit()?;
    let c = Arc::new(Coefficients::new(surface.spec(), grid));
    Ok(handle(grid, true, &c, Coefficients::tilde_laplacian))
}

/// The operators `Q` and `R` of one surface.
#[derive(Clone, Debug)]
pub struct QR {
    /// `Q = −e^{-sf}(∂_x² + A^{-2}∂_θ²) + R`.
    pub q: OperatorHandle,
    /// Lower-order part `R`.
    pub r: OperatorHandle,
    /// `−Δ̃ − e^{-sf}V₁`, the same operator in manifestly symmetric form.
    pub q_sym: OperatorHandle,
    /// Multiplication by `e^{-sf}V₁`.
    pub potential: OperatorHandle,
}

pub fn assemble_q_r(surface: &Surface, grid: &Grid) -> Result<QR> {
    surface.require_audit()?;
    let c = Arc::new(Coefficients::new(surface.spec(), grid));
    let pot = {
        let c = c.clone();
        OperatorHandle::new(grid, true, move |v| {
            let nx = c.nx();
            v.iter().enumerate().map(|(i, x)| x * (c.e[i] * c.v1[i % nx])).collect()
        })
    };
    Ok(QR {
        q: handle(grid, false, &c, Coefficients::q_product),
        r: handle(grid, false, &c, Coefficients::r),
        q_sym: handle(grid, true, &c, Coefficients::q_symmetric),
        potential: pot,
    })
}

/// `B = β(x)∂_x` with `β` the tapered arctangent.
pub fn commutant_b(grid: &Grid) -> OperatorHandle {
    let c = Arc::new(Coefficients::new(&SurfaceSpec::unperturbed(2), grid));
    handle(grid, false, &c, Coefficients::b)
}

/// `[Q, B]` by composition and by the expanded formula.
#[derive(Clone, Debug)]
pub struct CommutatorQB {
    pub direct: OperatorHandle,
    pub expansion: OperatorHandle,
}

pub fn commutator_qb(surface: &Surface, grid: &Grid) -> Result<CommutatorQB> {
    surface.require_audit()?;
    let c = Arc::new(Coefficients::new(surface.spec(), grid));
    let q = handle(grid, false, &c, Coefficients::q_product);
    let b = handle(grid, false, &c, Coefficients::b);
    Ok(CommutatorQB { direct: q.commutator(&b), expansion: handle(grid, false, &c, Coefficients::commutator_expansion) })
}

/// `P₁ = ψ(D_x/⟨D_θ⟩)`, `P₂ = 1 − P₁`, `P̃ = ψ̃(D_x/⟨D_θ⟩)`.
#[derive(Clone, Debug)]
pub struct FreqSplitter {
    pub p1: OperatorHandle,
    pub p2: OperatorHandle,
    pub p_tilde: OperatorHandle,
}

/// Symbol of `P₁` at `(ξ, η)`.
pub fn splitter_symbol(xi: f64, eta: f64) -> f64 {
    special::bump(&(xi / (1.0 + eta * eta).sqrt()))
}

fn multiplier_handle(grid: &Grid, s: fn(f64, f64) -> f64) -> OperatorHandle {
    let g = grid.clone();
    OperatorHandle::new(grid, true, move |v| {
        apply_multiplier(|xi, eta| C64::from(s(xi, eta)), &Field::from_vec(&g, v.to_vec()))
            .expect("bounded real multiplier")
            .into_vec()
    })
}

pub fn freq_splitter(grid: &Grid) -> FreqSplitter {
    FreqSplitter {
        p1: multiplier_handle(grid, splitter_symbol),
        p2: multiplier_handle(grid, |xi, eta| 1.0 - splitter_symbol(xi, eta)),
        p_tilde: multiplier_handle(grid, |xi, eta| special::bump_wide(&(xi / (1.0 + eta * eta).sqrt()))),
    }
}

/// `b(x, ξ, η) = χ(x; δ)χ(ξ/η; δ)χ̃(η; M)` as an expression.
pub fn microlocal_symbol(cut: &CutoffSpec) -> Expr {
    // χ̃(η) first: it vanishes at η = 0 where ξ/η is undefined
    Expr::eta().high_pass(cut.m) * (Expr::x().cutoff(cut.delta) * (Expr::xi() / Expr::eta()).cutoff(cut.delta))
}

fn check_resolution(cut: &CutoffSpec, grid: &Grid) -> Result<()> {
    cut.validate()?;
    let dxi = std::f64::consts::PI / grid.l();
    if cut.delta * cut.m < 2.0 * dxi {
        return Err(Error::ResolutionTooCoarse(format!(
            "delta*M = {} is below two frequency spacings ({})",
            cut.delta * cut.m,
            2.0 * dxi
        )));
    }
    if cut.delta < 4.0 * grid.hx() {
        return Err(Error::ResolutionTooCoarse(format!("delta = {} is below four grid spacings", cut.delta)));
    }
    Ok(())
}

/// Dense Weyl quantization of the microlocal cutoff `b`.
pub fn microlocalizer(cut: &CutoffSpec, grid: &Grid) -> Result<OperatorHandle> {
    check_resolution(cut, grid)?;
    quantize(&ExprSymbol::new(microlocal_symbol(cut), 0.0, 1.0), grid)
}

/// Scalable surrogate `χ(x)·[χ(D_x/D_θ)χ̃(D_θ)]·χ(x)`.
pub fn microlocalizer_sandwich(cut: &CutoffSpec, grid: &Grid) -> Result<OperatorHandle> {
    check_resolution(cut, grid)?;
    let cut = *cut;
    let g = grid.clone();
    let chi_x: Vec<f64> = grid.sample_x(|x| cut.chi(x));
    Ok(OperatorHandle::new(grid, true, move |v| {
        let nx = g.nx();
        let w: Vec<C64> = v.iter().enumerate().map(|(i, z)| z * chi_x[i % nx]).collect();
        let w = apply_multiplier(
            |xi, eta| {
                let t = cut.chi_tilde(eta);
                C64::from(if t == 0.0 { 0.0 } else { t * cut.chi(xi / eta) })
            },
            &Field::from_vec(&g, w),
        )
        .expect("bounded real multiplier");
        w.into_vec().into_iter().enumerate().map(|(i, z)| z * chi_x[i % nx]).collect()
    }))
}
