//! Warped-product profile, curvature potential and conformal perturbations.
//!
//! The surface is `ℝ_x × S¹_θ` with metric `e^{sf}(dx² + A(x)²dθ²)`,
//! `A(x) = (1 + x^{2m})^{1/2m}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Real, Series};

/// `A(x) = (1 + x^{2m})^{1/2m}`.
pub fn profile_a<S: Real>(x: &S, m: u32) -> S {
    (x.powi(2 * m) + 1.0).powf(1.0 / (2 * m) as f64)
}

/// `A(x)^{-2} = (1 + x^{2m})^{-1/m}`.
pub fn profile_a_inv_sq<S: Real>(x: &S, m: u32) -> S {
    (x.powi(2 * m) + 1.0).powf(-1.0 / m as f64)
}

/// `A'(x)/A(x) = x^{2m-1}/(1 + x^{2m})`.
pub fn log_profile_slope<S: Real>(x: &S, m: u32) -> S {
    x.powi(2 * m - 1) / (x.powi(2 * m) + 1.0)
}

/// Values of `A`, `A'`, `A''` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile {
    pub a: f64,
    pub da: f64,
    pub dda: f64,
}

/// Closed-form `A`, `A' = x^{2m-1}(1+x^{2m})^{1/2m-1}` and
/// `A'' = (2m-1)x^{2m-2}(1+x^{2m})^{1/2m-2}`.
pub fn profile(x: f64, m: u32) -> Profile {
    assert!(m >= 1);
    let q = 1.0 + x.powi(2 * m as i32);
    let e = 1.0 / (2 * m) as f64;
    Profile {
        a: q.powf(e),
        da: x.powi(2 * m as i32 - 1) * q.powf(e - 1.0),
        dda: (2 * m - 1) as f64 * x.powi(2 * m as i32 - 2) * q.powf(e - 2.0),
    }
}

/// `V₁ = ½A''/A − ¼(A'/A)²`, written as `x^{2m-2}((2m-1)/2 − x^{2m}/4)/(1+x^{2m})²`.
pub fn potential_v1<S: Real>(x: &S, m: u32) -> S {
    let x2m = x.powi(2 * m);
    let q = x2m.clone() + 1.0;
    let num = x.powi(2 * m - 2) * (x2m * (-0.25) + (2 * m - 1) as f64 * 0.5);
    num / (q.clone() * q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Zero,
    Radial,
    Angular,
}

/// `f = c_f x^p e^{-x²/w_f²}(1 + β cos θ)` (radial: without the θ factor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub family: Family,
    #[serde(default)]
    pub c_f: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_width")]
    pub w_f: f64,
    #[serde(rename = "N_audit", default = "default_n_audit")]
    pub n_audit: usize,
    /// Vanishing order `p` at `x = 0`; defaults to [`PerturbationSpec::default_power`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<u32>,
}

fn default_width() -> f64 {
    1.0
}

fn default_n_audit() -> usize {
    6
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        PerturbationSpec { family: Family::Zero, c_f: 0.0, beta: 0.0, w_f: 1.0, n_audit: 6, power: None }
    }

    pub fn radial(c_f: f64, w_f: f64) -> Self {
        PerturbationSpec { family: Family::Radial, c_f, beta: 0.0, w_f, n_audit: 6, power: None }
    }

    pub fn angular(c_f: f64, beta: f64, w_f: f64) -> Self {
        PerturbationSpec { family: Family::Angular, c_f, beta, w_f, n_audit: 6, power: None }
    }

    pub fn with_power(mut self, p: u32) -> Self {
        self.power = Some(p);
        self
    }

    /// Smallest even `p ≥ 2m − 1 + N_audit`: every audited derivative then
    /// still vanishes to order `2m − 1` at the origin.
    pub fn default_power(&self, m: u32) -> u32 {
        let p = 2 * m - 1 + self.n_audit as u32;
        p + p % 2
    }

    pub fn power(&self, m: u32) -> u32 {
        self.power.unwrap_or_else(|| self.default_power(m))
    }

    /// Rescales `c_f` so that `sup |f| = 1`.
    pub fn unit_peak(mut self, m: u32) -> Self {
        let p = self.power(m) as f64;
        let w2 = self.w_f * self.w_f;
        let radial_peak = if p == 0.0 { 1.0 } else { (p * w2 / 2.0).powf(p / 2.0) * (-p / 2.0).exp() };
        let angular_peak = match self.family {
            Family::Angular => 1.0 + self.beta.abs(),
            _ => 1.0,
        };
        self.c_f = 1.0 / (radial_peak * angular_peak);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_f > 0.0 && self.w_f.is_finite()) {
            return Err(Error::InvalidInput(format!("w_f must be positive, got {}", self.w_f)));
        }
        if !self.c_f.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidInput("c_f and beta must be finite".into()));
        }
        Ok(())
    }

    pub fn is_theta_independent(&self) -> bool {
        matches!(self.family, Family::Zero | Family::Radial) || self.beta == 0.0 || self.c_f == 0.0
    }

    pub fn is_zero(&self) -> bool {
        self.family == Family::Zero || self.c_f == 0.0
    }

    /// `f(x, θ)` on any [`Real`] scalar.
    pub fn eval<S: Real>(&self, x: &S, theta: &S, m: u32) -> S {
        if self.is_zero() {
            return x.cst(0.0);
        }
        let w2 = self.w_f * self.w_f;
        let radial = x.powi(self.power(m)) * (x.clone() * x.clone() * (-1.0 / w2)).exp() * self.c_f;
        match self.family {
            Family::Angular => radial * (theta.cos() * self.beta + 1.0),
            _ => radial,
        }
    }

    /// Taylor coefficients of the radial factor `x^p e^{-x²/w²}` at `x0`.
    fn radial_series(&self, x0: f64, degree: usize, m: u32) -> Series {
        let p = self.power(m) as usize;
        let mut mono = Series::zero(degree);
        let mut binom = 1.0;
        for n in 0..=degree.min(p) {
            if n > 0 {
                binom *= (p - n + 1) as f64 / n as f64;
            }
            mono.0[n] = binom * x0.powi((p - n) as i32);
        }
        let w2 = self.w_f * self.w_f;
        let mut arg = Series::zero(degree);
        arg.0[0] = -x0 * x0 / w2;
        if degree >= 1 {
            arg.0[1] = -2.0 * x0 / w2;
        }
        if degree >= 2 {
            arg.0[2] = -1.0 / w2;
        }
        mono.mul(&arg.exp())
    }

    /// `∂_x^j ∂_θ^k f(x, θ)`.
    pub fn partial(&self, j: usize, k: usize, x: f64, theta: f64, m: u32) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let angular = match (self.family, k) {
            (Family::Angular, 0) => 1.0 + self.beta * theta.cos(),
            (Family::Angular, k) => {
                let d = [theta.cos(), -theta.sin(), -theta.cos(), theta.sin()];
                self.beta * d[k % 4]
            }
            (_, 0) => 1.0,
            _ => return 0.0,
        };
        let series = self.radial_series(x, j, m);
        self.c_f * series.0[j] * crate::jet::factorial(j) * angular
    }

    /// Smallest `R` (to a 1e-3 step) with `|f| < tol` for all `|x| ≥ R`.
    pub fn support_radius(&self, m: u32, tol: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let amp = self.c_f.abs() * (1.0 + self.beta.abs());
        let p = self.power(m) as f64;
        let w2 = self.w_f * self.w_f;
        let peak = (p * w2 / 2.0).sqrt();
        // the envelope is decreasing beyond its peak
        let env = |x: f64| amp * x.powf(p) * (-x * x / w2).exp();
        let mut x = peak.max(1e-3);
        let mut step = self.w_f;
        while env(x) >= tol {
            x += step;
        }
        while step > 1e-3 {
            step *= 0.5;
            if env(x - step) < tol {
                x -= step;
            }
        }
        x
    }
}

/// Geometry of the surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub m: u32,
    pub s: f64,
    pub f: PerturbationSpec,
}

impl SurfaceSpec {
    pub fn unperturbed(m: u32) -> Self {
        SurfaceSpec { m, s: 0.0, f: PerturbationSpec::zero() }
    }

    /// Checks `m ≥ 2`, `|s| ≤ s_max` and the perturbation parameters.
    pub fn validate(&self, s_max: f64) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput(format!("m must be at least 2, got {}", self.m)));
        }
        if !self.s.is_finite() || self.s.abs() > s_max {
            return Err(Error::InvalidInput(format!("|s| = {} exceeds admissibility threshold {s_max}", self.s.abs())));
        }
        self.f.validate()
    }

    /// `s·f(x, θ)`, the exponent of the conformal factor.
    pub fn sf<S: Real>(&self, x: &S, theta: &S) -> S {
        self.f.eval(x, theta, self.m) * self.s
    }

    pub fn is_theta_independent(&self) -> bool {
        self.s == 0.0 || self.f.is_theta_independent()
    }
}

/// Outcome of [`audit_derivative_condition`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    #[serde(rename = "C_est")]
    pub c_est: f64,
    /// `(j, k, x, θ)` of the largest sampled ratio (or of the divergence).
    pub worst: (usize, usize, f64, f64),
}

const AUDIT_SHELLS: usize = 24;
const AUDIT_LOOKBACK: usize = 3;

/// Samples `|∂_x^j∂_θ^k f| / |x|^{2m−1}` on dyadic shells `|x| ∈ (w 2^{-ℓ-1}, w 2^{-ℓ}]`.
///
/// The ratio is declared divergent when its maximum on the innermost shell
/// exceeds twice the maximum three shells further out.
pub fn audit_derivative_condition(spec: &PerturbationSpec, m: u32, x_window: f64, sample_count: usize) -> Result<AuditReport> {
    if !(x_window > 0.0) {
        return Err(Error::InvalidInput("x_window must be positive".into()));
    }
    if sample_count < 64 {
        return Err(Error::InvalidInput("sample_count must be at least 64".into()));
    }
    spec.validate()?;
    if spec.is_zero() {
        return Ok(AuditReport { passed: true, c_est: 0.0, worst: (0, 0, 0.0, 0.0) });
    }
    let per_shell = sample_count.div_ceil(AUDIT_SHELLS).max(2);
    let thetas: Vec<f64> = match spec.family {
        Family::Angular => (0..8).map(|i| i as f64 * std::f64::consts::PI / 4.0).collect(),
        _ => vec![0.0],
    };
    let weight_pow = (2 * m - 1) as i32;
    let n = spec.n_audit;
    let mut best = AuditReport { passed: true, c_est: 0.0, worst: (0, 0, 0.0, 0.0) };
    for j in 0..=n {
        for k in 0..=n {
            if j + k == 0 {
                continue;
            }
            let mut shell_max = [0.0f64; AUDIT_SHELLS];
            let mut shell_arg = vec![(0.0, 0.0); AUDIT_SHELLS];
            for (l, (smax, sarg)) in shell_max.iter_mut().zip(shell_arg.iter_mut()).enumerate() {
                let hi = x_window * 0.5f64.powi(l as i32);
                for i in 0..per_shell {
                    let frac = 0.5 + 0.5 * (i as f64 + 0.5) / per_shell as f64;
                    for sign in [1.0, -1.0] {
                        let x = sign * hi * frac;
                        for &th in &thetas {
                            let r = spec.partial(j, k, x, th, m).abs() / x.abs().powi(weight_pow);
                            if !r.is_finite() || r > *smax {
                                *smax = if r.is_finite() { r } else { f64::INFINITY };
                                *sarg = (x, th);
                            }
                        }
                    }
                }
            }
            let deep = AUDIT_SHELLS - 1;
            let diverges = !shell_max[deep].is_finite() || shell_max[deep] > 2.0 * shell_max[deep - AUDIT_LOOKBACK] && shell_max[deep] > 0.0;
            if diverges {
                let (x, theta) = shell_arg[deep];
                return Err(Error::AuditFailed { j, k, x, theta });
            }
            for (l, &v) in shell_max.iter().enumerate() {
                if v > best.c_est {
                    best.c_est = v;
                    best.worst = (j, k, shell_arg[l].0, shell_arg[l].1);
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet, Var};

    #[test]
    fn profile_examples() {
        assert_eq!(profile(0.0, 2).a, 1.0);
        assert!((profile(1.0, 2).a - 2f64.powf(0.25)).abs() < 1e-15);
        assert_eq!(potential_v1(&0.0, 2), 0.0);
    }

    #[test]
    fn generic_profile_matches_closed_form() {
        for &x in &[-2.3, -0.4, 0.0, 0.7, 3.1] {
            for m in 2..=4 {
                let j = profile_a(&Jet::variable(Var::X, x, 2), m);
                let p = profile(x, m);
                assert!((j.value() - p.a).abs() < 1e-14);
                assert!((j.partial([1, 0, 0]) - p.da).abs() < 1e-12);
                assert!((j.partial([2, 0, 0]) - p.dda).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn v1_matches_profile_formula() {
        for &x in &[-1.7, 0.3, 1.0, 4.0] {
            let p = profile(x, 3);
            let direct = 0.5 * p.dda / p.a - 0.25 * (p.da / p.a).powi(2);
            assert!((potential_v1(&x, 3) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn perturbation_examples() {
        let z = PerturbationSpec::zero();
        assert_eq!(z.eval(&0.3, &1.0, 2), 0.0);
        let r = PerturbationSpec::radial(1.0, 1.0);
        assert_eq!(r.eval(&0.0, &0.0, 2), 0.0);
        let a = PerturbationSpec::angular(1.0, 0.5, 1.0);
        assert!((a.eval(&1.0, &0.0, 2) - 1.5 * (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn partials_match_jets() {
        let spec = PerturbationSpec::angular(0.7, 0.4, 1.3);
        let (x0, t0) = (0.8, 0.9);
        let jet = spec.eval(&Jet::variable(Var::X, x0, 6), &Jet::variable(Var::Theta, t0, 6), 2);
        for j in 0..=3 {
            for k in 0..=3 {
                let want = jet.partial([j, k, 0]);
                let got = spec.partial(j, k, x0, t0, 2);
                assert!((want - got).abs() < 1e-10 * (1.0 + want.abs()), "({j},{k}) {want} {got}");
            }
        }
    }

    #[test]
    fn unit_peak_normalizes() {
        let spec = PerturbationSpec::radial(1.0, 1.0).unit_peak(2);
        let sup = (0..20000).map(|i| spec.eval(&(i as f64 * 5e-4), &0.0, 2).abs()).fold(0.0, f64::max);
        assert!((sup - 1.0).abs() < 1e-6);
    }

    #[test]
    fn audit_zero_passes_with_zero_constant() {
        let rep = audit_derivative_condition(&PerturbationSpec::zero(), 2, 1.0, 64).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.c_est, 0.0);
    }

    #[test]
    fn audit_rejects_linear_vanishing() {
        let spec = PerturbationSpec::radial(1.0, 1.0).with_power(1);
        match audit_derivative_condition(&spec, 2, 1.0, 256) {
            Err(Error::AuditFailed { j, k, .. }) => assert_eq!((j, k), (1, 0)),
            other => panic!("expected audit failure, got {other:?}"),
        }
    }

    #[test]
    fn audit_rejects_bad_arguments() {
        assert!(audit_derivative_condition(&PerturbationSpec::zero(), 2, 0.0, 64).is_err());
        assert!(audit_derivative_condition(&PerturbationSpec::zero(), 2, 1.0, 10).is_err());
    }

    #[test]
    fn surface_validation() {
        assert!(SurfaceSpec::unperturbed(1).validate(0.2).is_err());
        let mut s = SurfaceSpec::unperturbed(2);
        s.s = 0.5;
        assert!(s.validate(0.2).is_err());
        s.s = 0.05;
        assert!(s.validate(0.2).is_ok());
    }
}
