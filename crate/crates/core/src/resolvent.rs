//! Pointwise lower bounds for `H_{e^{-sf}p}a` and the microlocal resolvent
//! floor `‖(Q + τ)u‖ ≥ c‖⟨D_θ⟩^{2/(m+1)−ε}u‖` on a finite subspace.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceSpec;
use crate::grid::{inner_raw, Field, Grid, C64};
use crate::operators::{assemble_q_r, microlocalizer_sandwich, CutoffSpec, Surface};
use crate::special::{self, cutoff, high_pass};
use crate::weyl::{poisson_jet, Expr, ExprSymbol, OperatorHandle, Point, Symbol};

/// `Λ(t) = ∫₀^t ⟨s⟩^{-1-ε₀} ds`.
pub fn lambda_fn(t: f64, eps0: f64) -> f64 {
    special::lambda_value(t, eps0)
}

fn lambda_prime(t: f64, eps0: f64) -> f64 {
    (1.0 + t * t).powf(-(1.0 + eps0) / 2.0)
}

/// `a`, `g`, `g̃` in closed form, and `H_{e^{-sf}p}a` through jets.
#[derive(Clone)]
pub struct HamiltonianSymbol {
    spec: SurfaceSpec,
    cut: CutoffSpec,
    q: Arc<dyn Symbol>,
    a: Arc<dyn Symbol>,
}

impl HamiltonianSymbol {
    pub fn new(surface: &Surface, cut: &CutoffSpec) -> Result<Self> {
        surface.require_audit()?;
        cut.validate()?;
        let spec = surface.spec().clone();
        let m = spec.m;
        let xi = Expr::xi;
        let p = xi() * xi() + Expr::profile_inv_sq(Expr::x(), m) * Expr::eta() * Expr::eta();
        let q = if spec.s == 0.0 || spec.f.is_zero() { p } else { (Expr::perturbation(&spec.f, m) * -spec.s).exp() * p };
        let zeta = xi() * Expr::eta().abs().powf(-cut.eps);
        // χ̃(η) first: it vanishes at η = 0 where ξ/η is undefined
        let a = Expr::eta().high_pass(cut.m)
            * (Expr::x().cutoff(cut.delta)
                * (xi() / Expr::eta()).cutoff(cut.delta)
                * Expr::x().lambda(cut.eps0)
                * zeta.lambda(cut.eps0));
        Ok(HamiltonianSymbol {
            spec,
            cut: *cut,
            q: Arc::new(ExprSymbol::new(q, 2.0, 1.0)),
            a: Arc::new(ExprSymbol::new(a, 0.0, cut.eps)),
        })
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    pub fn cut(&self) -> &CutoffSpec {
        &self.cut
    }

    /// `a` as a jet-evaluable symbol in `S^0_ε`.
    pub fn a_symbol(&self) -> Arc<dyn Symbol> {
        self.a.clone()
    }

    /// `e^{-sf}p` as a jet-evaluable symbol in `S^2_1`.
    pub fn q_symbol(&self) -> Arc<dyn Symbol> {
        self.q.clone()
    }

    fn cutoffs(&self, p: Point) -> f64 {
        let c = &self.cut;
        if p.eta == 0.0 {
            return 0.0;
        }
        cutoff(&p.x, c.delta) * cutoff(&(p.xi / p.eta), c.delta) * high_pass(&p.eta, c.m)
    }

    fn e_sf(&self, p: Point) -> f64 {
        (-self.spec.sf(&p.x, &p.theta)).exp()
    }

    fn zeta(&self, xi: f64, eta: f64) -> f64 {
        xi * eta.abs().powf(-self.cut.eps)
    }

    /// `A^{-3}A'(x)`.
    fn cube_slope(&self, x: f64) -> f64 {
        let m = self.spec.m as i32;
        x.powi(2 * m - 1) * (1.0 + x.powi(2 * m)).powf(-1.0 - 1.0 / m as f64)
    }

    fn p(&self, p: Point) -> f64 {
        let m = self.spec.m as i32;
        p.xi * p.xi + (1.0 + p.x.powi(2 * m)).powf(-1.0 / m as f64) * p.eta * p.eta
    }

    pub fn a(&self, p: Point) -> f64 {
        let e0 = self.cut.eps0;
        self.cutoffs(p) * lambda_fn(p.x, e0) * lambda_fn(self.zeta(p.xi, p.eta), e0)
    }

    /// `g₁ + g₂`, the part of `H_{e^{-sf}p}a` where nothing hits a cutoff or `e^{-sf}`.
    pub fn g(&self, p: Point) -> f64 {
        let (e0, eps) = (self.cut.eps0, self.cut.eps);
        let z = self.zeta(p.xi, p.eta);
        let g1 = 2.0 * p.xi * lambda_prime(p.x, e0) * lambda_fn(z, e0);
        let g2 = 2.0 * p.eta.abs().powf(2.0 - eps) * self.cube_slope(p.x) * lambda_fn(p.x, e0) * lambda_prime(z, e0);
        (g1 + g2) * self.e_sf(p) * self.cutoffs(p)
    }

    /// The terms where derivatives hit `e^{-sf}`.
    pub fn g_tilde(&self, p: Point) -> f64 {
        let s = self.spec.s;
        if s == 0.0 || self.spec.f.is_zero() {
            return 0.0;
        }
        let (e0, eps) = (self.cut.eps0, self.cut.eps);
        let m = self.spec.m;
        let z = self.zeta(p.xi, p.eta);
        let fx = self.spec.f.partial(1, 0, p.x, p.theta, m);
        let ft = self.spec.f.partial(0, 1, p.x, p.theta, m);
        let pp = self.p(p);
        let lx = lambda_fn(p.x, e0);
        let t1 = s * fx * pp * p.eta.abs().powf(-eps) * lx * lambda_prime(z, e0);
        let dl = lambda_fn(self.zeta(p.xi, p.eta + 1.0), e0) - lambda_fn(z, e0);
        let t2 = s * ft * pp * lx * dl;
        (t1 + t2) * self.e_sf(p) * self.cutoffs(p)
    }

    /// `{e^{-sf}p, a}` from jets of both symbols, with the `η`-difference.
    pub fn poisson(&self, p: Point) -> f64 {
        poisson_jet(&*self.q, &*self.a, p, 0).value().re
    }

    /// `|s|(|f_x| + |f_θ|)|η|^{2−ε}Λ(x)⟨ξ|η|^{-ε}⟩^{-1-ε₀}`.
    pub fn perturbation_bound(&self, p: Point) -> f64 {
        let m = self.spec.m;
        let f = &self.spec.f;
        let (e0, eps) = (self.cut.eps0, self.cut.eps);
        self.spec.s.abs()
            * (f.partial(1, 0, p.x, p.theta, m).abs() + f.partial(0, 1, p.x, p.theta, m).abs())
            * p.eta.abs().powf(2.0 - eps)
            * lambda_fn(p.x, e0).abs()
            * lambda_prime(self.zeta(p.xi, p.eta), e0)
    }

    /// `2e^{-sf}|η|^{-ε}(ξ² + η²x^{2m})`.
    pub fn case1_comparator(&self, p: Point) -> f64 {
        let m = self.spec.m as i32;
        2.0 * self.e_sf(p) * p.eta.abs().powf(-self.cut.eps) * (p.xi * p.xi + p.eta * p.eta * p.x.powi(2 * m))
    }

    /// `½|s|·sup_{0<|x|≤δ, θ} (|f_x| + |f_θ|)/|x|^{2m−1}`, the size of the
    /// `O(s)` correction to the case 1 ratio.
    pub fn s_band(&self) -> f64 {
        let m = self.spec.m;
        let f = &self.spec.f;
        let d = self.cut.delta;
        let mut sup: f64 = 0.0;
        for i in 1..=200 {
            let x = d * i as f64 / 200.0;
            for k in 0..32 {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
                for x in [x, -x] {
                    let v = (f.partial(1, 0, x, t, m).abs() + f.partial(0, 1, x, t, m).abs()) / x.abs().powi(2 * m as i32 - 1);
                    sup = sup.max(v);
                }
            }
        }
        0.5 * self.spec.s.abs() * sup
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `|ξ||η|^{-ε} ≤ δ`; ratio to `2e^{-sf}|η|^{-ε}(ξ² + η²x^{2m})`.
    Case1,
    /// `|ξ||η|^{-ε} ≥ δ`; ratio to `|η|^ε`.
    Case2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    /// Initial sample count; doubled until the minimum is stable.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_stable_tol")]
    pub stable_tol: f64,
    /// Pass threshold for case 1; defaults to `1 − 10δ² − s_band`.
    #[serde(default)]
    pub case1_c_min: Option<f64>,
    #[serde(default = "default_case2_c_min")]
    pub case2_c_min: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_eta_max() -> f64 {
    4096.0
}
fn default_samples() -> usize {
    1 << 14
}
fn default_max_samples() -> usize {
    1 << 20
}
fn default_stable_tol() -> f64 {
    1e-3
}
fn default_case2_c_min() -> f64 {
    1e-6
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            eta_max: default_eta_max(),
            samples: default_samples(),
            max_samples: default_max_samples(),
            stable_tol: default_stable_tol(),
            case1_c_min: None,
            case2_c_min: default_case2_c_min(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolLowerBoundReport {
    pub region: Region,
    pub min: f64,
    pub max: f64,
    pub witness: Point,
    pub samples: usize,
    /// Relative change of the minimum under the last sample doubling.
    pub doubling_change: f64,
    pub stable: bool,
    pub c_min: f64,
    pub pass: bool,
    /// See [`HamiltonianSymbol::s_band`].
    pub s_band: f64,
}

/// Additive recurrence with the generalized golden ratio in `D` dimensions.
struct Rd<const D: usize> {
    alpha: [f64; D],
    shift: [f64; D],
}

impl<const D: usize> Rd<D> {
    fn new(seed: u64) -> Self {
        let mut phi: f64 = 2.0;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (D as f64 + 1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alpha = [0.0; D];
        let mut shift = [0.0; D];
        for i in 0..D {
            alpha[i] = phi.powi(-(i as i32 + 1)).fract();
            shift[i] = rng.gen::<f64>();
        }
        Rd { alpha, shift }
    }

    fn point(&self, n: usize) -> [f64; D] {
        let mut u = [0.0; D];
        for i in 0..D {
            u[i] = (self.shift[i] + n as f64 * self.alpha[i]).fract();
        }
        u
    }
}

/// `[0,1] → [0,1]`, clustering samples at both ends where the extrema sit.
fn ends(u: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI * u).cos())
}

impl HamiltonianSymbol {
    /// Maps a unit-cube point into the scan region, `None` if the region is
    /// empty at the sampled `|η|`.
    fn region_point(&self, region: Region, u: [f64; 6], eta_max: f64) -> Option<Point> {
        let c = &self.cut;
        let d = c.delta;
        let x = 0.5 * d * (2.0 * ends(u[0]) - 1.0);
        let theta = 2.0 * std::f64::consts::PI * u[1];
        let lo = (2.0 * c.m + 1.0).ln();
        let ae = (lo + u[2] * (eta_max.ln() - lo)).exp();
        let eta = if u[3] < 0.5 { ae } else { -ae };
        let sign = if u[4] < 0.5 { 1.0 } else { -1.0 };
        // |ξ/η| ≤ δ/2 keeps every cutoff equal to 1
        let zeta_cap = 0.5 * d * ae.powf(1.0 - c.eps);
        let zeta = match region {
            Region::Case1 => zeta_cap.min(d) * ends(u[5]),
            Region::Case2 => {
                if zeta_cap <= d {
                    return None;
                }
                (d.ln() + ends(u[5]) * (zeta_cap.ln() - d.ln())).exp()
            }
        };
        Some(Point::new(x, theta, sign * zeta * ae.powf(c.eps), eta))
    }

    fn region_ratio(&self, region: Region, p: Point) -> Option<f64> {
        let v = self.g(p) + self.g_tilde(p);
        match region {
            Region::Case1 => {
                let c = self.case1_comparator(p);
                (c > 0.0).then(|| v / c)
            }
            Region::Case2 => Some(v / p.eta.abs().powf(self.cut.eps)),
        }
    }
}

/// Quasi-random scans of `(g + g̃)` over the case 1 and case 2 regions, with
/// all cutoffs equal to 1, doubling the sample count until the minimum settles.
/// Running extremes of a scan; ties in the minimum go to the lowest sample index.
#[derive(Clone, Copy)]
struct ScanAcc {
    lo: f64,
    hi: f64,
    at: usize,
    witness: Point,
    count: usize,
}

impl ScanAcc {
    fn empty() -> Self {
        ScanAcc { lo: f64::INFINITY, hi: f64::NEG_INFINITY, at: usize::MAX, witness: Point::new(0.0, 0.0, 0.0, 0.0), count: 0 }
    }

    fn merge(self, o: ScanAcc) -> ScanAcc {
        let (lo, at, witness) = if (o.lo, o.at) < (self.lo, self.at) { (o.lo, o.at, o.witness) } else { (self.lo, self.at, self.witness) };
        ScanAcc { lo, hi: self.hi.max(o.hi), at, witness, count: self.count + o.count }
    }
}

pub fn symbol_lower_bound_scan(h: &HamiltonianSymbol, cfg: &ScanConfig) -> Result<Vec<SymbolLowerBoundReport>> {
    let c = h.cut;
    if cfg.eta_max < 2.0 * c.m + 2.0 {
        return Err(Error::EmptyRegion(format!("case 1: eta_max = {} below 2M + 1", cfg.eta_max)));
    }
    if 0.5 * cfg.eta_max.powf(1.0 - c.eps) <= 1.0 {
        return Err(Error::EmptyRegion("case 2: |xi||eta|^-eps >= delta never meets |xi/eta| <= delta/2".into()));
    }
    let band = h.s_band();
    let seq = Rd::<6>::new(cfg.seed);
    [Region::Case1, Region::Case2]
        .into_iter()
        .map(|region| {
            let eval = |range: std::ops::Range<usize>| {
                range
                    .into_par_iter()
                    .filter_map(|n| {
                        let p = h.region_point(region, seq.point(n), cfg.eta_max)?;
                        Some((h.region_ratio(region, p)?, n, p))
                    })
                    .fold(ScanAcc::empty, |acc, (v, n, p)| acc.merge(ScanAcc { lo: v, hi: v, at: n, witness: p, count: 1 }))
                    .reduce(ScanAcc::empty, ScanAcc::merge)
            };
            let mut n = cfg.samples.max(16);
            let mut acc = eval(0..n);
            let (change, stable) = loop {
                if acc.count == 0 {
                    return Err(Error::EmptyRegion(format!("{region:?}")));
                }
                if 2 * n > cfg.max_samples {
                    break (f64::NAN, false);
                }
                let more = eval(n..2 * n);
                let prev = acc.lo;
                acc = acc.merge(more);
                n *= 2;
                let change = (prev - acc.lo).abs() / acc.lo.abs().max(1e-300);
                if change <= cfg.stable_tol {
                    break (change, true);
                }
            };
            let c_min = match region {
                Region::Case1 => cfg.case1_c_min.unwrap_or(1.0 - 10.0 * c.delta * c.delta - band),
                Region::Case2 => cfg.case2_c_min,
            };
            Ok(SymbolLowerBoundReport {
                region,
                min: acc.lo,
                max: acc.hi,
                witness: acc.witness,
                samples: acc.count,
                doubling_change: change,
                stable,
                c_min,
                pass: acc.lo >= c_min,
                s_band: band,
            })
        })
        .collect()
}

/// Orthonormal basis of `b^w`-localized Hermite–Gauss seeds
/// `e^{iηθ}h_j(x/w_η)`, `w_η = η^{-1/(m+1)}`.
#[derive(Clone, Debug)]
pub struct MicrolocalSubspace {
    grid: Grid,
    cut: CutoffSpec,
    etas: Vec<i64>,
    basis: Vec<Field>,
}

/// Hermite functions `h_0..h_{n-1}` at `t`, normalized in `L²(ℝ)`.
fn hermite_functions(t: f64, n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n];
    if n == 0 {
        return h;
    }
    h[0] = std::f64::consts::PI.powf(-0.25) * (-t * t / 2.0).exp();
    if n > 1 {
        h[1] = 2f64.sqrt() * t * h[0];
    }
    for k in 2..n {
        h[k] = (2.0 / k as f64).sqrt() * t * h[k - 1] - ((k - 1) as f64 / k as f64).sqrt() * h[k - 2];
    }
    h
}

/// Symmetric orthonormalization of `vs`, dropping Gram eigenvalues below
/// `rel` times the largest. Also returns the condition number of what was kept.
fn lowdin(vs: &[Field], rel: f64) -> (Vec<Field>, f64) {
    let d = vs.len();
    let gram = DMatrix::from_fn(d, d, |i, j| vs[i].inner(&vs[j]));
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > rel * top).collect();
    let low = keep.iter().map(|&k| eig.eigenvalues[k]).fold(f64::INFINITY, f64::min);
    let out = keep
        .iter()
        .map(|&k| {
            let scale = 1.0 / eig.eigenvalues[k].sqrt();
            let mut v = Field::zeros(vs[0].grid());
            for (i, s) in vs.iter().enumerate() {
                v.axpy(eig.eigenvectors[(i, k)].conj() * scale, s);
            }
            v
        })
        .collect();
    (out, top / low)
}

pub const MIN_SUBSPACE_DIM: usize = 8;

impl MicrolocalSubspace {
    /// Seeds `per_mode` Hermite functions at each `η` in `etas`, applies the
    /// sandwich surrogate of `b^w` and orthonormalizes, dropping directions
    /// with Gram eigenvalue below `1e-8` of the largest.
    pub fn build(grid: &Grid, cut: &CutoffSpec, m: u32, etas: &[i64], per_mode: usize) -> Result<Self> {
        let b = microlocalizer_sandwich(cut, grid)?;
        let mut seeds = Vec::with_capacity(etas.len() * per_mode);
        for &eta in etas {
            let w = (eta.unsigned_abs().max(1) as f64).powf(-1.0 / (m as f64 + 1.0));
            for j in 0..per_mode {
                seeds.push(b.apply(&Field::mode(grid, eta, |x| C64::from(hermite_functions(x / w, j + 1)[j]))));
            }
        }
        let (first, cond) = lowdin(&seeds, 1e-8);
        if first.len() < MIN_SUBSPACE_DIM {
            return Err(Error::SubspaceTooSmall { dim: first.len(), min: MIN_SUBSPACE_DIM });
        }
        // a second pass cleans up the rounding left by small Gram eigenvalues
        let (basis, _) = lowdin(&first, 0.5);
        let sub = MicrolocalSubspace { grid: grid.clone(), cut: *cut, etas: etas.to_vec(), basis };
        if sub.dim() < first.len() || sub.gram_defect() > 1e-10 {
            return Err(Error::IllConditionedGram { cond });
        }
        Ok(sub)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Field] {
        &self.basis
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cut(&self) -> &CutoffSpec {
        &self.cut
    }

    pub fn etas(&self) -> &[i64] {
        &self.etas
    }

    /// Largest fraction of `‖v‖²` any basis element carries outside the
    /// cutoff region: `(|x| > δ, frequency mass outside {|ξ| ≤ kδ|η|, |η| > M})`.
    pub fn support_leak(&self, k: f64) -> (f64, f64) {
        let g = &self.grid;
        let c = &self.cut;
        let nx = g.nx();
        let mut worst = (0.0f64, 0.0f64);
        for v in &self.basis {
            let total: f64 = v.data().iter().map(|z| z.norm_sqr()).sum();
            let out_x: f64 = v.data().iter().enumerate().filter(|(i, _)| g.xs()[i % nx].abs() > c.delta).map(|(_, z)| z.norm_sqr()).sum();
            let sp = v.transform();
            let spec_total: f64 = sp.coeffs().iter().map(|z| z.norm_sqr()).sum();
            let out_f: f64 = sp
                .coeffs()
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let (xi, eta) = (g.xis()[i % nx], g.etas()[i / nx]);
                    eta.abs() <= c.m || xi.abs() > k * c.delta * eta.abs()
                })
                .map(|(_, z)| z.norm_sqr())
                .sum();
            worst = (worst.0.max(out_x / total), worst.1.max(out_f / spec_total));
        }
        worst
    }

    /// `max |⟨v_i, v_j⟩ − δ_ij|`.
    pub fn gram_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.inner(b) - e).norm());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    pub dim: usize,
    /// `min_τ c(τ)`.
    pub c_est: f64,
    pub argmin_tau: f64,
    pub taus: Vec<f64>,
    /// `c(τ) = min ‖(Q + τ)u‖/‖Wu‖` over the subspace.
    pub c: Vec<f64>,
    pub rayleigh_min: f64,
    pub rayleigh_max: f64,
    /// `min ‖u‖/‖Wu‖` over the subspace.
    pub weight_floor: f64,
    /// Smallest eigenvalue of the compressed `Q`.
    pub q_min: f64,
    /// `max_i |c(τ_{i+1}) − c(τ_i)| − |τ_{i+1} − τ_i|`.
    pub continuity_excess: f64,
}

/// Lowest generalized eigenvalue of `(M, N)` with `N` positive definite.
fn generalized_min(m: &DMatrix<C64>, n_chol: &DMatrix<C64>) -> f64 {
    let linv = n_chol;
    let s = linv * m * linv.adjoint();
    let s = (&s + s.adjoint()) * C64::from(0.5);
    SymmetricEigen::new(s).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Default `τ` grid: `n` points on `[−1.25·max Rayleigh, 0]`.
pub fn default_tau_grid(rayleigh_max: f64, n: usize) -> Vec<f64> {
    let lo = -1.25 * rayleigh_max.max(0.0);
    (0..n).map(|i| lo + (0.0 - lo) * i as f64 / (n - 1).max(1) as f64).collect()
}

/// `c(τ)` on the union of `taus`, the negated Rayleigh quotients of the basis
/// and the negated eigenvalues of the compressed `Q`.
pub fn resolvent_lower_bound(surface: &Surface, sub: &MicrolocalSubspace, taus: &[f64], eps: f64) -> Result<ResolventReport> {
    let grid = sub.grid();
    let q = assemble_q_r(surface, grid)?.q_sym;
    resolvent_lower_bound_with(&q, sub, taus, eps, surface.spec().m)
}

pub fn resolvent_lower_bound_with(q: &OperatorHandle, sub: &MicrolocalSubspace, taus: &[f64], eps: f64, m: u32) -> Result<ResolventReport> {
    let grid = sub.grid();
    let d = sub.dim();
    if d < MIN_SUBSPACE_DIM {
        return Err(Error::SubspaceTooSmall { dim: d, min: MIN_SUBSPACE_DIM });
    }
    let expo = 2.0 / (m as f64 + 1.0) - eps;
    let wmult: Vec<C64> = grid.etas().iter().map(|e| C64::from((1.0 + e * e).powf(expo / 2.0))).collect();
    let v = sub.basis();
    let qv: Vec<Vec<C64>> = v.par_iter().map(|u| q.apply_raw(u.data())).collect();
    let wv: Vec<Vec<C64>> = v.par_iter().map(|u| grid.theta_multiplier(u.data(), &wmult)).collect();
    let cell = grid.cell();
    // entries ⟨col_j, col_i⟩ so that each form reads c*Xc
    let form = |x: &[Vec<C64>], y: &[Vec<C64>]| DMatrix::from_fn(d, d, |i, j| inner_raw(&x[j], &y[i]) * cell);
    let vd: Vec<Vec<C64>> = v.iter().map(|u| u.data().to_vec()).collect();
    let a = form(&qv, &qv);
    let b = form(&qv, &vd);
    let b = (&b + b.adjoint()) * C64::from(0.5);
    let n = form(&wv, &wv);
    let n = (&n + n.adjoint()) * C64::from(0.5);
    let chol = n.clone().cholesky().ok_or(Error::IllConditionedGram { cond: f64::INFINITY })?;
    let linv = chol.l().try_inverse().ok_or(Error::IllConditionedGram { cond: f64::INFINITY })?;
    let rq: Vec<f64> = (0..d).map(|i| b[(i, i)].re).collect();
    let q_eigs = SymmetricEigen::new(b.clone()).eigenvalues;
    let q_min = q_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let weight_floor = generalized_min(&DMatrix::identity(d, d), &linv).max(0.0).sqrt();
    let mut all: Vec<f64> = taus.to_vec();
    all.extend(rq.iter().map(|r| -r));
    all.extend(q_eigs.iter().map(|r| -r));
    all.retain(|t| t.is_finite());
    all.sort_by(f64::total_cmp);
    all.dedup();
    let c: Vec<f64> = all
        .par_iter()
        .map(|&t| {
            let mt = &a + &b * C64::from(2.0 * t) + DMatrix::<C64>::identity(d, d) * C64::from(t * t);
            generalized_min(&mt, &linv).max(0.0).sqrt()
        })
        .collect();
    let (k, c_est) = c.iter().cloned().enumerate().fold((0, f64::INFINITY), |(k, lo), (i, x)| if x < lo { (i, x) } else { (k, lo) });
    let continuity_excess = all
        .windows(2)
        .zip(c.windows(2))
        .map(|(t, cc)| (cc[1] - cc[0]).abs() - (t[1] - t[0]).abs())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ResolventReport {
        dim: d,
        c_est,
        argmin_tau: all[k],
        taus: all,
        c,
        rayleigh_min: rq.iter().cloned().fold(f64::INFINITY, f64::min),
        rayleigh_max: rq.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        weight_floor,
        q_min,
        continuity_excess,
    })
}

/// Block layout for [`dyadic_resolvent_scan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockScanConfig {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N_x")]
    pub nx: usize,
    /// Blocks `η ∈ [2^k, 2^{k+1}]` for `k` in this inclusive range.
    pub k_min: u32,
    pub k_max: u32,
    /// `η` values seeded per block, evenly spread over the block.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Hermite functions per seeded `η`.
    #[serde(default = "default_per_mode")]
    pub per_mode: usize,
    #[serde(default = "default_tau_points")]
    pub tau_points: usize,
}

fn default_modes() -> usize {
    8
}
fn default_per_mode() -> usize {
    8
}
fn default_tau_points() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub k: u32,
    pub eta_lo: i64,
    pub eta_hi: i64,
    pub report: ResolventReport,
}

/// Resolvent floors on dyadic `η` blocks, each on a grid whose angular window
/// is centred on the block.
pub fn dyadic_resolvent_scan(surface: &Surface, cut: &CutoffSpec, cfg: &BlockScanConfig) -> Result<Vec<BlockRow>> {
    if cfg.k_min > cfg.k_max || cfg.modes == 0 {
        return Err(Error::InvalidInput("need k_min ≤ k_max and modes > 0".into()));
    }
    let m = surface.spec().m;
    (cfg.k_min..=cfg.k_max)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = (1i64 << k, 1i64 << (k + 1));
            let etas: Vec<i64> = if cfg.modes == 1 {
                vec![(lo + hi) / 2]
            } else {
                (0..cfg.modes).map(|i| lo + (hi - lo) * i as i64 / (cfg.modes as i64 - 1)).collect()
            };
            let ntheta = ((hi - lo) as usize + 16).next_power_of_two();
            let grid = Grid::with_carrier(cfg.l, cfg.nx, ntheta, (lo + hi) / 2)?;
            let sub = MicrolocalSubspace::build(&grid, cut, m, &etas, cfg.per_mode)?;
            let q = assemble_q_r(surface, &grid)?.q_sym;
            let rq_max = sub.basis().iter().map(|u| q.apply(u).inner(u).re).fold(0.0, f64::max);
            let taus = default_tau_grid(rq_max, cfg.tau_points);
            let report = resolvent_lower_bound_with(&q, &sub, &taus, cut.eps, m)?;
            Ok(BlockRow { k, eta_lo: lo, eta_hi: hi, report })
        })
        .collect()
}
