//! Periodic discretization of `ℝ_x × S¹_θ` and its dual lattice.
//!
//! Nodes are `x_j = −L + j·2L/N_x` and `θ_l = 2πl/N_θ`. Values are stored
//! θ-major: `data[l * N_x + j]`, so each θ-row is a contiguous x-line.
//!
//! A grid may carry an angular frequency `η_c`: a stored field `v` then
//! represents `u = e^{iη_cθ}v` and the angular lattice is `η = η_c + q`,
//! `q ∈ [−N_θ/2, N_θ/2)`. This keeps high-frequency coherent states on a
//! small angular window.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const PAR_THRESHOLD: usize = 1 << 15;

struct Plans {
    x_fwd: Arc<dyn Fft<f64>>,
    x_inv: Arc<dyn Fft<f64>>,
    t_fwd: Arc<dyn Fft<f64>>,
    t_inv: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
pub struct Grid {
    l: f64,
    nx: usize,
    ntheta: usize,
    eta_carrier: i64,
    xs: Arc<Vec<f64>>,
    thetas: Arc<Vec<f64>>,
    xis: Arc<Vec<f64>>,
    etas: Arc<Vec<f64>>,
    plans: Arc<Plans>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("l", &self.l)
            .field("nx", &self.nx)
            .field("ntheta", &self.ntheta)
            .field("eta_carrier", &self.eta_carrier)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, o: &Self) -> bool {
        self.l == o.l && self.nx == o.nx && self.ntheta == o.ntheta && self.eta_carrier == o.eta_carrier
    }
}

/// Serializable grid parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N_x")]
    pub nx: usize,
    #[serde(rename = "N_theta")]
    pub ntheta: usize,
    #[serde(default)]
    pub eta_carrier: i64,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        if self.eta_carrier == 0 {
            Grid::new(self.l, self.nx, self.ntheta)
        } else {
            Grid::with_carrier(self.l, self.nx, self.ntheta, self.eta_carrier)
        }
    }
}

fn fft_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    /// Grid with `N_x, N_θ ≥ 8`, both powers of two.
    pub fn new(l: f64, nx: usize, ntheta: usize) -> Result<Grid> {
        if ntheta < 8 {
            return Err(Error::InvalidInput(format!("N_theta must be at least 8, got {ntheta}")));
        }
        Self::build(l, nx, ntheta, 0)
    }

    /// Grid whose angular lattice is centred on `eta_carrier`; any power of two `N_θ ≥ 1`.
    pub fn with_carrier(l: f64, nx: usize, ntheta: usize, eta_carrier: i64) -> Result<Grid> {
        Self::build(l, nx, ntheta, eta_carrier)
    }

    fn build(l: f64, nx: usize, ntheta: usize, eta_carrier: i64) -> Result<Grid> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidInput(format!("L must be positive, got {l}")));
        }
        if nx < 8 || !nx.is_power_of_two() {
            return Err(Error::InvalidInput(format!("N_x must be a power of two ≥ 8, got {nx}")));
        }
        if ntheta == 0 || !ntheta.is_power_of_two() {
            return Err(Error::InvalidInput(format!("N_theta must be a power of two, got {ntheta}")));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            x_fwd: planner.plan_fft_forward(nx),
            x_inv: planner.plan_fft_inverse(nx),
            t_fwd: planner.plan_fft_forward(ntheta),
            t_inv: planner.plan_fft_inverse(ntheta),
        };
        let h = 2.0 * l / nx as f64;
        let xs = (0..nx).map(|j| -l + j as f64 * h).collect();
        let thetas = (0..ntheta).map(|k| 2.0 * PI * k as f64 / ntheta as f64).collect();
        let xis = (0..nx).map(|k| PI * fft_freq(k, nx) as f64 / l).collect();
        let etas = (0..ntheta).map(|q| (eta_carrier + fft_freq(q, ntheta)) as f64).collect();
        Ok(Grid {
            l,
            nx,
            ntheta,
            eta_carrier,
            xs: Arc::new(xs),
            thetas: Arc::new(thetas),
            xis: Arc::new(xis),
            etas: Arc::new(etas),
            plans: Arc::new(plans),
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { l: self.l, nx: self.nx, ntheta: self.ntheta, eta_carrier: self.eta_carrier }
    }

    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ntheta(&self) -> usize {
        self.ntheta
    }
    pub fn eta_carrier(&self) -> i64 {
        self.eta_carrier
    }
    pub fn len(&self) -> usize {
        self.nx * self.ntheta
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn hx(&self) -> f64 {
        2.0 * self.l / self.nx as f64
    }
    pub fn htheta(&self) -> f64 {
        2.0 * PI / self.ntheta as f64
    }
    /// Quadrature weight of one node.
    pub fn cell(&self) -> f64 {
        self.hx() * self.htheta()
    }
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
    /// `ξ_k` in FFT order.
    pub fn xis(&self) -> &[f64] {
        &self.xis
    }
    /// `η_q` (carrier included) in FFT order.
    pub fn etas(&self) -> &[f64] {
        &self.etas
    }
    pub fn xi_max(&self) -> f64 {
        PI * (self.nx / 2) as f64 / self.l
    }
    pub fn index(&self, ix: usize, it: usize) -> usize {
        it * self.nx + ix
    }

    /// The same box with both resolutions doubled.
    pub fn refined(&self) -> Grid {
        let nt = if self.ntheta == 1 { 1 } else { self.ntheta * 2 };
        Grid::build(self.l, self.nx * 2, nt, self.eta_carrier).expect("refinement of a valid grid")
    }

    /// Same angular lattice, `N_x` replaced.
    pub fn with_nx(&self, nx: usize) -> Result<Grid> {
        Grid::build(self.l, nx, self.ntheta, self.eta_carrier)
    }

    fn rows<'a>(&self, data: &'a mut [C64]) -> impl ParallelIterator<Item = &'a mut [C64]> {
        data.par_chunks_mut(self.nx)
    }

    /// In-place FFT along x of every θ-row; the inverse is normalized.
    pub fn fft_x(&self, data: &mut [C64], inverse: bool) {
        let plan = if inverse { &self.plans.x_inv } else { &self.plans.x_fwd };
        if data.len() >= PAR_THRESHOLD && self.ntheta > 1 {
            self.rows(data).for_each(|row| plan.process(row));
        } else {
            plan.process(data);
        }
        if inverse {
            let s = 1.0 / self.nx as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// In-place FFT along θ of every x-column; the inverse is normalized.
    pub fn fft_theta(&self, data: &mut [C64], inverse: bool) {
        let (nx, nt) = (self.nx, self.ntheta);
        if nt == 1 {
            return;
        }
        let plan = if inverse { &self.plans.t_inv } else { &self.plans.t_fwd };
        let mut tr = vec![C64::default(); data.len()];
        for it in 0..nt {
            for ix in 0..nx {
                tr[ix * nt + it] = data[it * nx + ix];
            }
        }
        plan.process(&mut tr);
        let s = if inverse { 1.0 / nt as f64 } else { 1.0 };
        for it in 0..nt {
            for ix in 0..nx {
                data[it * nx + ix] = tr[ix * nt + it] * s;
            }
        }
    }

    /// Applies `m(ξ_k)` along x, the same on every θ-row.
    pub fn x_multiplier(&self, data: &[C64], mult: &[C64]) -> Vec<C64> {
        let mut w = data.to_vec();
        self.fft_x(&mut w, false);
        for row in w.chunks_mut(self.nx) {
            row.iter_mut().zip(mult).for_each(|(v, m)| *v *= m);
        }
        self.fft_x(&mut w, true);
        w
    }

    /// Applies `m(η_q)` along θ, the same in every x-column.
    pub fn theta_multiplier(&self, data: &[C64], mult: &[C64]) -> Vec<C64> {
        let mut w = data.to_vec();
        self.fft_theta(&mut w, false);
        for (row, m) in w.chunks_mut(self.nx).zip(mult) {
            row.iter_mut().for_each(|v| *v *= m);
        }
        self.fft_theta(&mut w, true);
        w
    }

    pub fn dx(&self, data: &[C64]) -> Vec<C64> {
        let m: Vec<C64> = self.xis.iter().map(|&k| C64::new(0.0, k)).collect();
        self.x_multiplier(data, &m)
    }

    pub fn dxx(&self, data: &[C64]) -> Vec<C64> {
        let m: Vec<C64> = self.xis.iter().map(|&k| C64::from(-k * k)).collect();
        self.x_multiplier(data, &m)
    }

    pub fn dtheta(&self, data: &[C64]) -> Vec<C64> {
        let m: Vec<C64> = self.etas.iter().map(|&k| C64::new(0.0, k)).collect();
        self.theta_multiplier(data, &m)
    }

    pub fn dthetatheta(&self, data: &[C64]) -> Vec<C64> {
        let m: Vec<C64> = self.etas.iter().map(|&k| C64::from(-k * k)).collect();
        self.theta_multiplier(data, &m)
    }

    /// Pointwise product with a function of `(x, θ)` sampled on the nodes.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &t in self.thetas.iter() {
            for &x in self.xs.iter() {
                out.push(f(x, t));
            }
        }
        out
    }

    /// Sampled function of `x` only.
    pub fn sample_x(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.xs.iter().map(|&x| f(x)).collect()
    }
}

/// Complex state on a grid in the conjugated frame `L²(dx dθ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    data: Vec<C64>,
}

/// Fourier coefficients `c = DFT(u)/(N_x N_θ)` in FFT order, θ-major.
///
/// Plancherel reads `‖u‖² = (2L)(2π) Σ |c|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<C64>,
}

impl SpectralField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }
    pub fn from_coeffs(grid: &Grid, coeffs: Vec<C64>) -> SpectralField {
        assert_eq!(coeffs.len(), grid.len());
        SpectralField { grid: grid.clone(), coeffs }
    }
    /// `ℓ²` norm squared with the Plancherel weight.
    pub fn norm_sq(&self) -> f64 {
        self.weight() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
    pub fn inner(&self, other: &SpectralField) -> C64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum::<C64>() * self.weight()
    }
    fn weight(&self) -> f64 {
        2.0 * self.grid.l * 2.0 * PI
    }
    /// `Σ w(ξ, η)|c|²` with the Plancherel weight.
    pub fn weighted_sum(&self, w: impl Fn(f64, f64) -> f64) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for (q, row) in self.coeffs.chunks(g.nx).enumerate() {
            let eta = g.etas[q];
            for (k, c) in row.iter().enumerate() {
                acc += w(g.xis[k], eta) * c.norm_sqr();
            }
        }
        acc * self.weight()
    }
}

/// Weighted derivative seminorms of a state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seminorms {
    /// `‖⟨x⟩^{-1}∂_x u‖²`
    pub a: f64,
    /// `‖⟨x⟩^{-3/2}∂_θ u‖²`
    pub b: f64,
    /// `‖|x|^m⟨x⟩^{-m-3/2}∂_θ u‖²`
    pub c: f64,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Field {
        Field { grid: grid.clone(), data: vec![C64::default(); grid.len()] }
    }

    pub fn from_vec(grid: &Grid, data: Vec<C64>) -> Field {
        assert_eq!(data.len(), grid.len(), "field length does not match grid");
        Field { grid: grid.clone(), data }
    }

    /// Samples `u(x, θ)`; on a carrier grid `u` must be the envelope.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> C64) -> Field {
        let mut data = Vec::with_capacity(grid.len());
        for &t in grid.thetas() {
            for &x in grid.xs() {
                data.push(f(x, t));
            }
        }
        Field { grid: grid.clone(), data }
    }

    /// `e^{iη₀θ}g(x)` expressed relative to the grid's carrier.
    pub fn mode(grid: &Grid, eta0: i64, g: impl Fn(f64) -> C64) -> Field {
        let d = (eta0 - grid.eta_carrier) as f64;
        Field::from_fn(grid, |x, t| C64::from_polar(1.0, d * t) * g(x))
    }

    /// Random state with Gaussian Fourier coefficients on `|ξ| ≤ frac·ξ_max`, `|η − η_c| ≤ q_max`.
    pub fn random_band_limited(grid: &Grid, rng: &mut impl Rng, frac: f64, q_max: i64) -> Field {
        let mut c = vec![C64::default(); grid.len()];
        let kmax = frac * grid.xi_max();
        for q in 0..grid.ntheta {
            if fft_freq(q, grid.ntheta).abs() > q_max {
                continue;
            }
            for k in 0..grid.nx {
                if grid.xis[k].abs() <= kmax && fft_freq(k, grid.nx) != -(grid.nx as i64) / 2 {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    c[q * grid.nx + k] = C64::new(re, im);
                }
            }
        }
        let mut f = SpectralField::from_coeffs(grid, c).inverse();
        let n = f.norm();
        f.scale_mut(C64::from(1.0 / n));
        f
    }

    /// Band-limited random state multiplied by `e^{-x²/(2σ²)}`, normalized.
    pub fn random_localized(grid: &Grid, rng: &mut impl Rng, frac: f64, q_max: i64, sigma: f64) -> Field {
        let mut f = Field::random_band_limited(grid, rng, frac, q_max);
        for (i, v) in f.data.iter_mut().enumerate() {
            let x = grid.xs[i % grid.nx];
            *v *= (-x * x / (2.0 * sigma * sigma)).exp();
        }
        let n = f.norm();
        f.scale_mut(C64::from(1.0 / n));
        f
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }
    pub fn with_data(&self, data: Vec<C64>) -> Field {
        Field::from_vec(&self.grid, data)
    }

    /// `⟨u, v⟩ = ∫∫ u v̄ dx dθ`.
    pub fn inner(&self, other: &Field) -> C64 {
        inner_raw(&self.data, &other.data) * self.grid.cell()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale_mut(&mut self, a: C64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: C64) -> Field {
        let mut f = self.clone();
        f.scale_mut(a);
        f
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: C64, other: &Field) {
        self.data.iter_mut().zip(&other.data).for_each(|(v, w)| *v += a * w);
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut f = self.clone();
        f.axpy(C64::from(-1.0), other);
        f
    }

    pub fn transform(&self) -> SpectralField {
        let mut c = self.data.clone();
        self.grid.fft_x(&mut c, false);
        self.grid.fft_theta(&mut c, false);
        let s = 1.0 / self.grid.len() as f64;
        c.iter_mut().for_each(|v| *v *= s);
        SpectralField { grid: self.grid.clone(), coeffs: c }
    }

    /// `∫_{|x| > x0} |u|² dx dθ`.
    pub fn mass_outside(&self, x0: f64) -> f64 {
        let g = &self.grid;
        self.data
            .iter()
            .enumerate()
            .filter(|(i, _)| g.xs[i % g.nx].abs() > x0)
            .map(|(_, v)| v.norm_sqr())
            .sum::<f64>()
            * g.cell()
    }

    /// `‖P_η u‖²` for each angular lattice frequency, in FFT order.
    pub fn mode_norms(&self) -> Vec<f64> {
        let s = self.transform();
        s.coeffs.chunks(self.grid.nx).map(|row| row.iter().map(|c| c.norm_sqr()).sum::<f64>() * s.weight()).collect()
    }
}

impl SpectralField {
    pub fn inverse(&self) -> Field {
        let mut d = self.coeffs.clone();
        let n = self.grid.len() as f64;
        d.iter_mut().for_each(|v| *v *= n);
        self.grid.fft_theta(&mut d, true);
        self.grid.fft_x(&mut d, true);
        Field { grid: self.grid.clone(), data: d }
    }
}

/// JSON header of a binary field snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N_x")]
    pub nx: usize,
    #[serde(rename = "N_theta")]
    pub ntheta: usize,
    #[serde(default)]
    pub eta_carrier: i64,
    /// `"conjugated"`: envelope samples in `L²(dx dθ)`.
    pub frame: String,
}

pub const SNAPSHOT_FRAME: &str = "conjugated";

impl SnapshotHeader {
    pub fn grid(&self) -> Result<Grid> {
        if self.frame != SNAPSHOT_FRAME {
            return Err(Error::InvalidInput(format!("unknown snapshot frame {:?}", self.frame)));
        }
        GridSpec { l: self.l, nx: self.nx, ntheta: self.ntheta, eta_carrier: self.eta_carrier }.build()
    }
}

impl Field {
    pub fn snapshot_header(&self) -> SnapshotHeader {
        let g = &self.grid;
        SnapshotHeader { l: g.l, nx: g.nx, ntheta: g.ntheta, eta_carrier: g.eta_carrier, frame: SNAPSHOT_FRAME.into() }
    }

    /// Row-major (θ rows of x samples) `(re, im)` pairs as little-endian `f64`.
    pub fn write_le(&self, w: &mut impl Write) -> io::Result<()> {
        let mut buf = Vec::with_capacity(16 * self.data.len());
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_le(grid: &Grid, r: &mut impl Read) -> io::Result<Field> {
        let mut buf = vec![0u8; 16 * grid.len()];
        r.read_exact(&mut buf)?;
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let data = buf.chunks_exact(16).map(|c| C64::new(f(&c[..8]), f(&c[8..]))).collect();
        Ok(Field::from_vec(grid, data))
    }
}

pub fn inner_raw(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(u, v)| u * v.conj()).sum()
}

/// `F^{-1}(σ(ξ, η)û)`.
pub fn apply_multiplier(sigma: impl Fn(f64, f64) -> C64, u: &Field) -> Result<Field> {
    let g = u.grid();
    let mut s = u.transform();
    for (q, row) in s.coeffs.chunks_mut(g.nx).enumerate() {
        let eta = g.etas[q];
        for (k, c) in row.iter_mut().enumerate() {
            let m = sigma(g.xis[k], eta);
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::NonFiniteSymbol { xi: g.xis[k], eta });
            }
            *c *= m;
        }
    }
    Ok(s.inverse())
}

/// `‖u‖²_{H^r} = Σ (1 + ξ² + η²)^r |û|²`.
pub fn sobolev_norm(u: &Field, r: f64) -> f64 {
    u.transform().weighted_sum(|xi, eta| (1.0 + xi * xi + eta * eta).powf(r))
}

/// `‖⟨D_x⟩^{r_x}u‖² + ‖⟨D_θ⟩^{r_θ}u‖²`.
pub fn anisotropic_sobolev_norm(u: &Field, r_x: f64, r_theta: f64) -> f64 {
    u.transform().weighted_sum(|xi, eta| (1.0 + xi * xi).powf(r_x) + (1.0 + eta * eta).powf(r_theta))
}

/// Weights of [`Seminorms`] sampled on the x-nodes, squared.
pub struct SeminormWeights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl SeminormWeights {
    pub fn new(grid: &Grid, m: u32) -> Self {
        let jx = |x: f64| 1.0 + x * x;
        SeminormWeights {
            a: grid.sample_x(|x| 1.0 / jx(x)),
            b: grid.sample_x(|x| jx(x).powf(-1.5)),
            c: grid.sample_x(|x| x.abs().powi(2 * m as i32) * jx(x).powf(-(m as f64) - 1.5)),
        }
    }

    pub fn evaluate(&self, u: &Field) -> Seminorms {
        let g = u.grid();
        let ux = g.dx(u.data());
        let ut = g.dtheta(u.data());
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..g.len() {
            let ix = i % g.nx;
            let px = ux[i].norm_sqr();
            let pt = ut[i].norm_sqr();
            a += self.a[ix] * px;
            b += self.b[ix] * pt;
            c += self.c[ix] * pt;
        }
        let w = g.cell();
        Seminorms { a: a * w, b: b * w, c: c * w }
    }
}

pub fn weighted_seminorms(u: &Field, m: u32) -> Seminorms {
    SeminormWeights::new(u.grid(), m).evaluate(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_conventions() {
        let g = Grid::new(2.0, 8, 8).unwrap();
        assert_eq!(g.xs()[0], -2.0);
        assert!((g.xis()[1] - PI / 2.0).abs() < 1e-15);
        assert_eq!(g.xis()[4], -PI * 4.0 / 2.0);
        assert_eq!(g.etas()[7], -1.0);
        let c = Grid::with_carrier(2.0, 8, 2, 16).unwrap();
        assert_eq!(c.etas(), &[16.0, 15.0]);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(Grid::new(1.0, 12, 8).is_err());
        assert!(Grid::new(1.0, 8, 4).is_err());
        assert!(Grid::new(-1.0, 8, 8).is_err());
        assert!(Grid::with_carrier(1.0, 8, 3, 5).is_err());
    }

    #[test]
    fn constant_concentrates_at_origin() {
        let g = Grid::new(3.0, 16, 8).unwrap();
        let s = Field::from_fn(&g, |_, _| C64::from(1.0)).transform();
        assert!((s.coeffs()[0] - C64::from(1.0)).norm() < 1e-14);
        assert!(s.coeffs()[1..].iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn roundtrip_and_parseval() {
        let g = Grid::new(3.0, 32, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Field::random_band_limited(&g, &mut rng, 1.0, 8);
        let v = Field::random_band_limited(&g, &mut rng, 1.0, 8);
        let back = u.transform().inverse();
        assert!(back.sub(&u).norm() < 1e-12 * u.norm());
        let lhs = u.inner(&v);
        let rhs = u.transform().inner(&v.transform());
        assert!((lhs - rhs).norm() < 1e-10 * u.norm() * v.norm());
    }

    #[test]
    fn derivative_of_plane_wave() {
        let g = Grid::new(PI, 16, 8).unwrap();
        let u = Field::from_fn(&g, |x, t| C64::from_polar(1.0, 3.0 * x + 2.0 * t));
        let ux = g.dx(u.data());
        let ut = g.dtheta(u.data());
        for i in 0..g.len() {
            assert!((ux[i] - C64::new(0.0, 3.0) * u.data()[i]).norm() < 1e-12);
            assert!((ut[i] - C64::new(0.0, 2.0) * u.data()[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn nonfinite_symbol_reported() {
        let g = Grid::new(1.0, 8, 8).unwrap();
        let u = Field::zeros(&g);
        assert!(matches!(apply_multiplier(|xi, _| C64::from(1.0 / xi), &u), Err(Error::NonFiniteSymbol { .. })));
    }
}
