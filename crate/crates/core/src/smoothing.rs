//! Local smoothing functionals along trajectories, frequency sweeps of the
//! smoothing ratios, and diagnostics of the `ψ(D_x/⟨D_θ⟩)` splitting.
//!
//! All functionals are evaluated on the conjugated-frame field propagated by
//! `Q`, with the weights `⟨x⟩^{-1}`, `⟨x⟩^{-3/2}` and `|x|^m⟨x⟩^{-m-3/2}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{propagate, PropagateConfig, Trajectory};
use crate::geometry::{profile_a_inv_sq, SurfaceSpec};
use crate::grid::{sobolev_norm, Field, Grid, GridSpec, C64};
use crate::operators::{assemble_q_r, freq_splitter, CutoffSpec, Surface};
use crate::weyl::OperatorHandle;

/// Gaussian width of the coherent initial data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    /// `w = η₀^{-1/(m+1)}`, the ground-state scale of the per-mode oscillator.
    #[default]
    Oscillator,
    /// `w = 1`.
    Flat,
}

impl Width {
    pub fn value(self, eta0: i64, m: u32) -> f64 {
        match self {
            Width::Oscillator => (eta0.unsigned_abs().max(1) as f64).powf(-1.0 / (m as f64 + 1.0)),
            Width::Flat => 1.0,
        }
    }
}

/// `e^{iη₀θ}e^{-x²/(2w²)}`, normalized in `L²`.
pub fn coherent_state(grid: &Grid, eta0: i64, m: u32, width: Width) -> Field {
    let w = width.value(eta0, m);
    let u = Field::mode(grid, eta0, |x| C64::from((-x * x / (2.0 * w * w)).exp()));
    let n = u.norm();
    u.scaled(C64::from(1.0 / n))
}

/// Trapezoidal rule on equally spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

fn weighted_norm_sq(grid: &Grid, data: &[C64], w: &[f64]) -> f64 {
    let nx = grid.nx();
    data.iter().enumerate().map(|(i, z)| w[i % nx] * z.norm_sqr()).sum::<f64>() * grid.cell()
}

fn jx(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingFunctional {
    /// `∫₀^T ‖⟨x⟩^{-1}∂_x u‖² + ‖⟨x⟩^{-3/2}∂_θ u‖² dt`.
    pub ls_main: f64,
    /// The same with `|x|^m⟨x⟩^{-m-3/2}` on the `∂_θ` term.
    pub ls_poscom: f64,
    pub main_integrand: Vec<f64>,
    pub poscom_integrand: Vec<f64>,
}

/// Integrands at every sample and their trapezoidal time integrals.
pub fn smoothing_functional(traj: &Trajectory, m: u32) -> SmoothingFunctional {
    let grid = traj.initial.grid().clone();
    let wx = grid.sample_x(|x| jx(x).powi(-2));
    let wt = grid.sample_x(|x| jx(x).powi(-3));
    let wp = grid.sample_x(|x| x.abs().powi(2 * m as i32) * jx(x).powf(-2.0 * m as f64 - 3.0));
    let (main_integrand, poscom_integrand): (Vec<f64>, Vec<f64>) = traj
        .samples
        .par_iter()
        .map(|u| {
            let ux = weighted_norm_sq(&grid, &grid.dx(u.data()), &wx);
            let ut = grid.dtheta(u.data());
            (ux + weighted_norm_sq(&grid, &ut, &wt), ux + weighted_norm_sq(&grid, &ut, &wp))
        })
        .unzip();
    let h = traj.dt_out();
    SmoothingFunctional {
        ls_main: trapezoid(&main_integrand, h),
        ls_poscom: trapezoid(&poscom_integrand, h),
        main_integrand,
        poscom_integrand,
    }
}

fn hermitian_q(surface: &Surface, grid: &Grid) -> Result<OperatorHandle> {
    Ok(assemble_q_r(surface, grid)?.q_sym)
}

/// `LS_poscom / ‖u₀‖²_{H^{1/2}}`.
pub fn poscom_ratio(surface: &Surface, grid: &Grid, u0: &Field, cfg: &PropagateConfig) -> Result<f64> {
    let q = hermitian_q(surface, grid)?;
    let traj = propagate(&q, u0, cfg)?;
    Ok(smoothing_functional(&traj, surface.spec().m).ls_poscom / sobolev_norm(u0, 0.5))
}

/// Frequency sweep over coherent data; each point runs on `grid` with its
/// angular window centred on `η₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: GridSpec,
    pub eta0s: Vec<i64>,
    pub r: f64,
    #[serde(default)]
    pub width: Width,
    /// Lowest `η₀` points left out of the slope fit.
    #[serde(default = "default_fit_skip")]
    pub fit_skip: usize,
    /// When set, each point propagates on the x-frequency band
    /// `|ξ| ≤ band·η₀ + 10/w` (see [`PropagateConfig::xi_cut`]).
    #[serde(default)]
    pub band: Option<f64>,
    pub evolve: PropagateConfig,
}

fn default_fit_skip() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta0: i64,
    pub ls_main: f64,
    pub ls_poscom: f64,
    /// `‖u₀‖²_{H^r}`.
    pub hr: f64,
    /// `‖u₀‖²_{H^{1/2}}`.
    pub h_half: f64,
    /// `LS_main / ‖u₀‖²_{H^r}`.
    pub ratio: f64,
    /// `LS_poscom / ‖u₀‖²_{H^{1/2}}`.
    pub poscom_ratio: f64,
    pub max_drift: f64,
    pub max_boundary_mass: f64,
    /// False when the boundary monitor flagged the run.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SurfaceSpec,
    pub config: SweepConfig,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log LS_main` against `log η₀` over the valid
    /// points after the first `fit_skip`; absent with fewer than two.
    pub slope: Option<f64>,
}

impl SweepResult {
    /// The same trajectories measured against `‖u₀‖²_{H^r}` for another `r`.
    pub fn with_r(&self, r: f64) -> Result<SweepResult> {
        let mut out = self.clone();
        out.config.r = r;
        for p in &mut out.points {
            let grid = point_grid(&self.config.grid, p.eta0)?;
            p.hr = sobolev_norm(&coherent_state(&grid, p.eta0, self.spec.m, self.config.width), r);
            p.ratio = p.ls_main / p.hr;
        }
        Ok(out)
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(|p| p.valid)
    }

    /// `max/min` of [`SweepPoint::ratio`] over the valid points.
    pub fn ratio_spread(&self) -> f64 {
        spread(self.valid_points().map(|p| p.ratio))
    }

    pub fn poscom_spread(&self) -> f64 {
        spread(self.valid_points().map(|p| p.poscom_ratio))
    }
}

fn spread(it: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi / lo
}

fn point_grid(spec: &GridSpec, eta0: i64) -> Result<Grid> {
    Grid::with_carrier(spec.l, spec.nx, spec.ntheta, eta0)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// One coherent run per `η₀`: both smoothing functionals and their ratios.
pub fn main_theorem_sweep(surface: &Surface, cfg: &SweepConfig) -> Result<SweepResult> {
    surface.require_audit()?;
    if cfg.eta0s.is_empty() || cfg.eta0s.iter().any(|&e| e <= 0) {
        return Err(Error::InvalidInput("eta0 list must be non-empty and positive".into()));
    }
    let m = surface.spec().m;
    let points = cfg
        .eta0s
        .par_iter()
        .map(|&eta0| {
            let grid = point_grid(&cfg.grid, eta0)?;
            let q = hermitian_q(surface, &grid)?;
            let u0 = coherent_state(&grid, eta0, m, cfg.width);
            let mut evolve = cfg.evolve.clone();
            if let Some(b) = cfg.band {
                evolve.xi_cut = Some(b * eta0 as f64 + 10.0 / cfg.width.value(eta0, m));
            }
            let traj = match propagate(&q, &u0, &evolve) {
                Err(Error::BoundaryMassExceeded { .. }) => None,
                r => Some(r?),
            };
            let hr = sobolev_norm(&u0, cfg.r);
            let h_half = sobolev_norm(&u0, 0.5);
            Ok(match traj {
                Some(traj) => {
                    let ls = smoothing_functional(&traj, m);
                    SweepPoint {
                        eta0,
                        ls_main: ls.ls_main,
                        ls_poscom: ls.ls_poscom,
                        hr,
                        h_half,
                        ratio: ls.ls_main / hr,
                        poscom_ratio: ls.ls_poscom / h_half,
                        max_drift: traj.drift.iter().fold(0.0, |a, d| a.max(d.abs())),
                        max_boundary_mass: traj.boundary_mass.iter().cloned().fold(0.0, f64::max),
                        valid: !traj.boundary_flagged,
                    }
                }
                None => SweepPoint {
                    eta0,
                    ls_main: f64::NAN,
                    ls_poscom: f64::NAN,
                    hr,
                    h_half,
                    ratio: f64::NAN,
                    poscom_ratio: f64::NAN,
                    max_drift: f64::NAN,
                    max_boundary_mass: f64::NAN,
                    valid: false,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit: Vec<&SweepPoint> = points.iter().filter(|p| p.valid).skip(cfg.fit_skip).collect();
    let slope = (fit.len() >= 2).then(|| {
        let x: Vec<f64> = fit.iter().map(|p| (p.eta0 as f64).ln()).collect();
        let y: Vec<f64> = fit.iter().map(|p| p.ls_main.ln()).collect();
        fit_slope(&x, &y)
    });
    Ok(SweepResult { spec: surface.spec().clone(), config: cfg.clone(), points, slope })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingDiagnostics {
    /// `max_t (‖⟨D_θ⟩u₂‖ − ‖D_x u₂‖)₊` with `u₂ = P₂u`.
    pub u2_bound_resid: f64,
    /// `max_t ‖u(t)‖_{H¹}`, the scale for `u2_bound_resid`.
    pub h1_scale: f64,
    /// `∫₀^T ‖⟨x⟩[Q, P₁]u‖ dt` with the commutator formed by composition.
    pub source_norm: f64,
    /// For `s = 0`, the same integral of `‖⟨x⟩[A^{-2}, P₁]D_θ²u‖`.
    pub source_norm_reduced: Option<f64>,
    /// Smallest `C` with `‖⟨x⟩^{-1}⟨D_θ⟩u₂‖ ≤ C(‖⟨x⟩^{-1}∂_x u₂‖ + ‖u‖_{H^{1/2}})` at every sample.
    pub garding_constant: f64,
}

pub fn splitting_diagnostics(surface: &Surface, grid: &Grid, traj: &Trajectory) -> Result<SplittingDiagnostics> {
    let q = hermitian_q(surface, grid)?;
    let sp = freq_splitter(grid);
    let m = surface.spec().m;
    let reduced = surface.spec().s == 0.0;
    let ones = vec![1.0; grid.nx()];
    let wjx = grid.sample_x(|x| 1.0 + x * x);
    let winv = grid.sample_x(|x| 1.0 / (1.0 + x * x));
    let a2: Vec<f64> = grid.sample_x(|x| profile_a_inv_sq(&x, m));
    let jeta: Vec<C64> = grid.etas().iter().map(|e| C64::from((1.0 + e * e).sqrt())).collect();
    let per_sample: Vec<[f64; 5]> = traj
        .samples
        .par_iter()
        .map(|u| {
            let u2 = sp.p2.apply(u);
            let eta_u2 = grid.theta_multiplier(u2.data(), &jeta);
            let dx_u2 = grid.dx(u2.data());
            let lhs = weighted_norm_sq(grid, &eta_u2, &ones).sqrt();
            let rhs = weighted_norm_sq(grid, &dx_u2, &ones).sqrt();
            let h1 = sobolev_norm(u, 1.0).sqrt();
            let h_half = sobolev_norm(u, 0.5).sqrt();
            let g_lhs = weighted_norm_sq(grid, &eta_u2, &winv).sqrt();
            let g_rhs = weighted_norm_sq(grid, &dx_u2, &winv).sqrt() + h_half;
            let comm = q.apply(&sp.p1.apply(u)).sub(&sp.p1.apply(&q.apply(u)));
            let src = weighted_norm_sq(grid, comm.data(), &wjx).sqrt();
            let src_red = if reduced {
                // D_θ² = −∂_θ²
                let d2u: Vec<C64> = grid.dthetatheta(u.data()).into_iter().map(|z| -z).collect();
                let nx = grid.nx();
                let mul = |v: &[C64]| -> Vec<C64> { v.iter().enumerate().map(|(i, z)| z * a2[i % nx]).collect() };
                let a_p = mul(sp.p1.apply_raw(&d2u).as_slice());
                let p_a = sp.p1.apply_raw(&mul(&d2u));
                let c: Vec<C64> = a_p.iter().zip(&p_a).map(|(x, y)| x - y).collect();
                weighted_norm_sq(grid, &c, &wjx).sqrt()
            } else {
                0.0
            };
            [(lhs - rhs).max(0.0), h1, src, src_red, if g_rhs > 0.0 { g_lhs / g_rhs } else { 0.0 }]
        })
        .collect();
    let col = |k: usize| per_sample.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let h = traj.dt_out();
    Ok(SplittingDiagnostics {
        u2_bound_resid: max(col(0)),
        h1_scale: max(col(1)),
        source_norm: trapezoid(&col(2), h),
        source_norm_reduced: reduced.then(|| trapezoid(&col(3), h)),
        garding_constant: max(col(4)),
    })
}

/// `∫₀^T ‖⟨D_θ⟩^r χ(x)P₁u(t)‖² dt / ‖g‖²` for `u(t) = e^{-itQ}g`; 0 for `g = 0`.
pub fn microlocal_evolution_norm(surface: &Surface, grid: &Grid, g: &Field, r: f64, cut: &CutoffSpec, cfg: &PropagateConfig) -> Result<f64> {
    cut.validate()?;
    let g2 = g.norm_sq();
    if g2 == 0.0 {
        return Ok(0.0);
    }
    let q = hermitian_q(surface, grid)?;
    let traj = propagate(&q, g, cfg)?;
    let p1 = freq_splitter(grid).p1;
    let chi2 = grid.sample_x(|x| cut.chi(x).powi(2));
    let jr: Vec<C64> = grid.etas().iter().map(|e| C64::from((1.0 + e * e).powf(r / 2.0))).collect();
    let vals: Vec<f64> = traj
        .samples
        .par_iter()
        .map(|u| {
            let v = grid.theta_multiplier(p1.apply(u).data(), &jr);
            weighted_norm_sq(grid, &v, &chi2)
        })
        .collect();
    Ok(trapezoid(&vals, traj.dt_out()) / g2)
}
