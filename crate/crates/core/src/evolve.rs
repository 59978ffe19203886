//! Time evolution `u(t) = e^{-itQ}u₀` and the commutator identity
//! `∫₀^T ⟨[Q,B]u, u⟩ dt = −i⟨Bu, u⟩|₀^T` for `(D_t + Q)u = 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_raw, Field, C64};
use crate::jet::smooth_step;
use crate::weyl::OperatorHandle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Krylov,
    CrankNicolson,
}

/// Damping mask `e^{-γ dt S((|x|−x_a)/(L−x_a))}` in the outer margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Absorber {
    /// `x_a`: the mask is exactly 1 for `|x| ≤ x_a`.
    pub start: f64,
    /// `γ`, the damping rate at the walls.
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    pub dt_out: f64,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    /// Per-step bound on the Krylov error estimate, relative to `‖u‖`.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    /// Allowed `|‖u(t)‖ − ‖u₀‖|/‖u₀‖` per unit time.
    #[serde(default = "default_drift_tol")]
    pub drift_tol: f64,
    /// Mass is monitored in `|x| > L − boundary_margin`.
    #[serde(default = "default_margin")]
    pub boundary_margin: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    /// Abort instead of flagging when the boundary mass exceeds its tolerance.
    #[serde(default)]
    pub strict_boundary: bool,
    #[serde(default)]
    pub absorber: Option<Absorber>,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    /// Propagate with `Q − E₀`, `E₀ = ⟨Qu₀, u₀⟩/‖u₀‖²`, and restore the phase
    /// `e^{-itE₀}` at every sample. Cheaper for data concentrated near one energy.
    #[serde(default)]
    pub shift_energy: bool,
    /// Propagate `PQP` with `P` the projection onto `|ξ| ≤ xi_cut`. `u₀` must
    /// lie in the band to 1e-10 relative; the absorber output is projected back.
    #[serde(default)]
    pub xi_cut: Option<f64>,
}

fn default_krylov_dim() -> usize {
    30
}
fn default_step_tol() -> f64 {
    1e-10
}
fn default_drift_tol() -> f64 {
    1e-8
}
fn default_margin() -> f64 {
    2.0
}
fn default_boundary_tol() -> f64 {
    1e-8
}
fn default_integrator() -> Integrator {
    Integrator::Krylov
}

impl PropagateConfig {
    pub fn new(t_final: f64, dt: f64, dt_out: f64) -> Self {
        PropagateConfig {
            t_final,
            dt,
            dt_out,
            krylov_dim: default_krylov_dim(),
            step_tol: default_step_tol(),
            drift_tol: default_drift_tol(),
            boundary_margin: default_margin(),
            boundary_tol: default_boundary_tol(),
            strict_boundary: false,
            absorber: None,
            integrator: Integrator::Krylov,
            shift_energy: false,
            xi_cut: None,
        }
    }

    pub fn with_absorber(mut self, a: Absorber) -> Self {
        self.absorber = Some(a);
        self
    }

    pub fn with_integrator(mut self, i: Integrator) -> Self {
        self.integrator = i;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidInput(format!("T must be non-negative, got {}", self.t_final)));
        }
        if !(self.dt > 0.0 && self.dt_out > 0.0 && self.dt <= self.dt_out * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!("need 0 < dt ≤ dt_out, got dt = {}, dt_out = {}", self.dt, self.dt_out)));
        }
        if self.krylov_dim < 2 {
            return Err(Error::InvalidInput("krylov_dim must be at least 2".into()));
        }
        Ok(())
    }
}

/// Sampled solution `u(t_j)`, `t_j = j·dt_out`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub initial: Field,
    pub times: Vec<f64>,
    pub samples: Vec<Field>,
    /// `‖u(t_j)‖ − ‖u₀‖`.
    pub drift: Vec<f64>,
    /// `‖u(t_j)‖²` restricted to the boundary margin.
    pub boundary_mass: Vec<f64>,
    pub boundary_flagged: bool,
    /// Largest per-step Krylov error estimate (relative).
    pub max_step_error: f64,
    /// Number of substeps each `dt` step was split into at the end of the run.
    pub substeps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.samples.last().expect("trajectory holds at least the initial sample")
    }

    pub fn dt_out(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// `⟨Qu(t_j), u(t_j)⟩` at every sample.
    pub fn energies(&self, q: &OperatorHandle) -> Vec<f64> {
        self.samples.iter().map(|u| q.apply(u).inner(u).re).collect()
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `e^{-iτT}e₁` for the Lanczos tridiagonal `T`.
fn small_exp(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<C64> {
    let d = alpha.len();
    let mut tm = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        tm[(i, i)] = alpha[i];
        if i + 1 < d {
            tm[(i, i + 1)] = beta[i];
            tm[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(tm);
    (0..d)
        .map(|i| (0..d).map(|k| C64::from_polar(eig.eigenvectors[(i, k)] * eig.eigenvectors[(0, k)], -tau * eig.eigenvalues[k])).sum())
        .collect()
}

/// Lanczos approximation of `e^{-iτQ}u`, stopping once the error estimate
/// drops below `tol`; returns the result and the estimate relative to `‖u‖`.
fn lanczos_exp(q: &OperatorHandle, u: &[C64], tau: f64, kmax: usize, tol: f64, t: f64) -> Result<(Vec<C64>, f64)> {
    let beta0 = norm(u);
    if beta0 == 0.0 {
        return Ok((u.to_vec(), 0.0));
    }
    let mut basis: Vec<Vec<C64>> = vec![u.iter().map(|z| z / beta0).collect()];
    let mut alpha = Vec::with_capacity(kmax);
    let mut beta: Vec<f64> = Vec::with_capacity(kmax);
    let (y, err) = loop {
        let j = alpha.len();
        let mut w = q.apply_raw(&basis[j]);
        let a = inner_raw(&w, &basis[j]).re;
        for (x, v) in w.iter_mut().zip(&basis[j]) {
            *x -= v * a;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (x, v) in w.iter_mut().zip(&basis[j - 1]) {
                *x -= v * b;
            }
        }
        // full reorthogonalization keeps the basis orthonormal to rounding
        for v in &basis {
            let c = inner_raw(&w, v);
            for (x, y) in w.iter_mut().zip(v) {
                *x -= y * c;
            }
        }
        let b = norm(&w);
        alpha.push(a);
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::KrylovBreakdown { t, detail: format!("non-finite Lanczos coefficient at step {j}") });
        }
        let scale = alpha.iter().map(|x| x.abs()).fold(0.0, f64::max) + beta.iter().cloned().fold(0.0, f64::max);
        let happy = b <= 1e-13 * scale.max(1e-300);
        if happy || alpha.len() >= 4 || alpha.len() == kmax {
            let y = small_exp(&alpha, &beta, tau);
            let err = if happy { 0.0 } else { b * y[alpha.len() - 1].norm() };
            if happy || err <= tol || alpha.len() == kmax {
                break (y, err);
            }
        }
        beta.push(b);
        basis.push(w.into_iter().map(|z| z / b).collect());
    };
    let mut out = vec![C64::default(); u.len()];
    for (v, c) in basis.iter().zip(&y) {
        let c = c * beta0;
        for (o, x) in out.iter_mut().zip(v) {
            *o += x * c;
        }
    }
    Ok((out, err))
}

/// Crank–Nicolson step: solves `(1 + iτQ/2)v = (1 − iτQ/2)u` by CG on the normal equations.
fn crank_nicolson(q: &OperatorHandle, u: &[C64], tau: f64, t: f64) -> Result<Vec<C64>> {
    let h = C64::new(0.0, tau / 2.0);
    let qu = q.apply_raw(u);
    let rhs: Vec<C64> = u.iter().zip(&qu).map(|(a, b)| a - h * b).collect();
    // A†A = 1 + (τ/2)²Q², A†b = b − i(τ/2)Qb
    let qb = q.apply_raw(&rhs);
    let b: Vec<C64> = rhs.iter().zip(&qb).map(|(a, q)| a - h * q).collect();
    let k2 = (tau / 2.0) * (tau / 2.0);
    let op = |x: &[C64]| -> Vec<C64> {
        let qq = q.apply_raw(&q.apply_raw(x));
        x.iter().zip(qq).map(|(a, b)| a + b * k2).collect()
    };
    let mut x = rhs.clone();
    let ax = op(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
    let mut p = r.clone();
    let mut rr = inner_raw(&r, &r).re;
    let target = 1e-28 * inner_raw(&b, &b).re;
    for _ in 0..2000 {
        if rr <= target {
            return Ok(x);
        }
        let ap = op(&p);
        let alpha = rr / inner_raw(&ap, &p).re;
        x.iter_mut().zip(&p).for_each(|(a, b)| *a += b * alpha);
        r.iter_mut().zip(&ap).for_each(|(a, b)| *a -= b * alpha);
        let rr2 = inner_raw(&r, &r).re;
        let beta = rr2 / rr;
        rr = rr2;
        p.iter_mut().zip(&r).for_each(|(a, b)| *a = b + *a * beta);
    }
    Err(Error::KrylovBreakdown { t, detail: "Crank–Nicolson CG did not converge".into() })
}

fn absorber_mask(u: &Field, a: &Absorber, dt: f64) -> Vec<f64> {
    let g = u.grid();
    let l = g.l();
    let width = l - a.start;
    g.sample_x(|x| {
        let r = (x.abs() - a.start) / width;
        if r <= 0.0 {
            1.0
        } else {
            (-a.strength * dt * 0.5 * smooth_step(&r.min(1.0))).exp()
        }
    })
}

/// Solves `(D_t + Q)u = 0` from `u₀`, sampling every `dt_out`.
pub fn propagate(q: &OperatorHandle, u0: &Field, cfg: &PropagateConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !q.hermitian_hint() {
        return Err(Error::InvalidInput("propagation requires a Hermitian-certified operator".into()));
    }
    let grid = u0.grid().clone();
    let n0 = u0.norm();
    let margin_x = grid.l() - cfg.boundary_margin;
    let n_out = (cfg.t_final / cfg.dt_out + 1e-9).floor() as usize;
    let per_out = (cfg.dt_out / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.dt_out / per_out as f64;
    let mask = cfg.absorber.as_ref().map(|a| absorber_mask(u0, a, dt));
    let nx = grid.nx();
    let e0 = if cfg.shift_energy && n0 > 0.0 { q.apply(u0).inner(u0).re / (n0 * n0) } else { 0.0 };
    let shifted;
    let q = if e0 != 0.0 {
        shifted = q.sub(&OperatorHandle::identity(&grid).scale(C64::from(e0)));
        &shifted
    } else {
        q
    };
    let band: Option<Vec<C64>> = cfg.xi_cut.map(|k| grid.xis().iter().map(|xi| C64::from(if xi.abs() <= k { 1.0 } else { 0.0 })).collect());
    let banded;
    let q = match &band {
        Some(b) => {
            let outside = u0.sub(&u0.with_data(grid.x_multiplier(u0.data(), b))).norm();
            if outside > 1e-10 * n0 {
                return Err(Error::InvalidInput(format!("initial data has {outside:e} outside |xi| <= {}", cfg.xi_cut.unwrap())));
            }
            let (g, b, inner) = (grid.clone(), b.clone(), q.clone());
            banded = OperatorHandle::new(&grid, true, move |v| g.x_multiplier(&inner.apply_raw(&g.x_multiplier(v, &b)), &b));
            &banded
        }
        None => q,
    };

    let mut traj = Trajectory {
        initial: u0.clone(),
        times: vec![0.0],
        samples: vec![u0.clone()],
        drift: vec![0.0],
        boundary_mass: vec![u0.mass_outside(margin_x)],
        boundary_flagged: false,
        max_step_error: 0.0,
        substeps: 1,
    };
    let mut cur = match &band {
        Some(b) => grid.x_multiplier(u0.data(), b),
        None => u0.data().to_vec(),
    };
    let mut substeps = 1usize;
    for j in 1..=n_out {
        for s in 0..per_out {
            let t = ((j - 1) * per_out + s) as f64 * dt;
            if let Some(m) = &mask {
                cur.iter_mut().enumerate().for_each(|(i, z)| *z *= m[i % nx]);
            }
            cur = match cfg.integrator {
                Integrator::CrankNicolson => crank_nicolson(q, &cur, dt, t)?,
                Integrator::Krylov => loop {
                    let tau = dt / substeps as f64;
                    let mut v = cur.clone();
                    let mut worst: f64 = 0.0;
                    let mut ok = true;
                    for _ in 0..substeps {
                        let (w, err) = lanczos_exp(q, &v, tau, cfg.krylov_dim, cfg.step_tol, t)?;
                        worst = worst.max(err);
                        if err > cfg.step_tol {
                            ok = false;
                            break;
                        }
                        v = w;
                    }
                    if ok {
                        traj.max_step_error = traj.max_step_error.max(worst);
                        break v;
                    }
                    substeps *= 2;
                    if substeps > 1 << 14 {
                        return Err(Error::KrylovBreakdown { t, detail: format!("step error {worst:e} with {substeps} substeps") });
                    }
                },
            };
            if let Some(m) = &mask {
                cur.iter_mut().enumerate().for_each(|(i, z)| *z *= m[i % nx]);
                if let Some(b) = &band {
                    cur = grid.x_multiplier(&cur, b);
                }
            }
        }
        let t = j as f64 * cfg.dt_out;
        let u = if e0 != 0.0 {
            let ph = C64::from_polar(1.0, -e0 * t);
            Field::from_vec(&grid, cur.iter().map(|z| z * ph).collect())
        } else {
            Field::from_vec(&grid, cur.clone())
        };
        if !u.is_finite() {
            return Err(Error::KrylovBreakdown { t, detail: "non-finite state".into() });
        }
        let drift = u.norm() - n0;
        if cfg.absorber.is_none() && drift.abs() > cfg.drift_tol * (1.0 + t) * n0.max(1e-300) {
            return Err(Error::UnitarityLost { t, drift });
        }
        let bm = u.mass_outside(margin_x);
        if bm > cfg.boundary_tol * n0 * n0 {
            if cfg.strict_boundary {
                return Err(Error::BoundaryMassExceeded { t, mass: bm });
            }
            traj.boundary_flagged = true;
        }
        traj.times.push(t);
        traj.samples.push(u);
        traj.drift.push(drift);
        traj.boundary_mass.push(bm);
    }
    traj.substeps = substeps;
    Ok(traj)
}

/// Composite Simpson rule on equally spaced samples; an odd interval count
/// ends with Simpson's 3/8 rule over the last three intervals.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let intervals = values.len().saturating_sub(1);
    match intervals {
        0 => return 0.0,
        1 => return h / 2.0 * (values[0] + values[1]),
        _ => {}
    }
    let even = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
    let mut acc = 0.0;
    for i in (0..even).step_by(2) {
        acc += h / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
    }
    if even < intervals {
        let k = even;
        acc += 3.0 * h / 8.0 * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
    }
    acc
}

/// Both sides of the commutator identity along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// `∫₀^T ⟨[Q,B]u, u⟩ dt`.
    pub lhs: C64,
    /// `−i⟨Bu, u⟩|₀^T`.
    pub rhs: C64,
    /// `|lhs − rhs| / (|lhs| + |rhs| + ‖u₀‖²)`.
    pub residual: f64,
    /// The same with the boundary term taken as `+i⟨Bu, u⟩|₀^T`.
    pub residual_plus_sign: f64,
}

/// Evaluates the identity with `[Q, B]` formed by composition of the given handles.
pub fn commutator_identity_residual(q: &OperatorHandle, b: &OperatorHandle, traj: &Trajectory) -> IdentityResidual {
    let comm = q.commutator(b);
    let vals: Vec<C64> = traj.samples.iter().map(|u| comm.apply(u).inner(u)).collect();
    let h = traj.dt_out();
    let re: Vec<f64> = vals.iter().map(|z| z.re).collect();
    let im: Vec<f64> = vals.iter().map(|z| z.im).collect();
    let lhs = C64::new(simpson(&re, h), simpson(&im, h));
    let bu = |u: &Field| b.apply(u).inner(u);
    let jump = bu(traj.last()) - bu(&traj.initial);
    let rhs = C64::new(0.0, -1.0) * jump;
    let n2 = traj.initial.norm_sq();
    let residual = (lhs - rhs).norm() / (lhs.norm() + rhs.norm() + n2);
    let plus = C64::new(0.0, 1.0) * jump;
    let residual_plus_sign = (lhs - plus).norm() / (lhs.norm() + plus.norm() + n2);
    IdentityResidual { lhs, rhs, residual, residual_plus_sign }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        for n in [3usize, 4, 5, 6, 7, 10, 11] {
            let h = 1.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3) - 2.0 * (i as f64 * h)).collect();
            assert!((simpson(&v, h) - (0.25 - 1.0)).abs() < 1e-14, "{n}");
        }
    }
}
