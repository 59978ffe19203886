//! Cutoff functions, the integrated weight `Λ`, and 1D quadrature.

use crate::jet::{smooth_step, taylor, Real};

/// `χ(t; δ)`: 1 for `|t| ≤ δ/2`, 0 for `|t| ≥ δ`, monotone in `|t|`.
pub fn cutoff<S: Real>(t: &S, delta: f64) -> S {
    let v = t.val().abs();
    if v <= delta / 2.0 {
        return t.cst(1.0);
    }
    if v >= delta {
        return t.cst(0.0);
    }
    let at = if t.val() < 0.0 { -t.clone() } else { t.clone() };
    t.cst(1.0) - smooth_step(&((at - delta / 2.0) / (delta / 2.0)))
}

/// `χ̃(t; M)`: 0 for `|t| ≤ M`, 1 for `|t| ≥ 2M`.
pub fn high_pass<S: Real>(t: &S, m: f64) -> S {
    let v = t.val().abs();
    if v <= m {
        return t.cst(0.0);
    }
    if v >= 2.0 * m {
        return t.cst(1.0);
    }
    let at = if t.val() < 0.0 { -t.clone() } else { t.clone() };
    smooth_step(&((at - m) / m))
}

/// `ψ(τ)`: 1 for `|τ| ≤ 1`, 0 for `|τ| ≥ 2`.
pub fn bump<S: Real>(t: &S) -> S {
    cutoff(&(t.clone() * 0.5), 1.0)
}

/// `ψ̃(τ) = ψ(τ/2)`, identically 1 on the support of `ψ`.
pub fn bump_wide<S: Real>(t: &S) -> S {
    bump(&(t.clone() * 0.5))
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 48)
}

/// `Λ(t) = ∫₀^t ⟨s⟩^{-1-ε₀} ds`; equal to `arctan t` when `ε₀ = 1`.
pub fn lambda_value(t: f64, eps0: f64) -> f64 {
    if eps0 == 1.0 {
        return t.atan();
    }
    if t < 0.0 {
        return -lambda_value(-t, eps0);
    }
    let w = |s: f64| (1.0 + s * s).powf(-(1.0 + eps0) / 2.0);
    // split at 1 so the slowly decaying tail gets its own refinement
    if t <= 1.0 {
        integrate(&w, 0.0, t, 1e-15)
    } else {
        integrate(&w, 0.0, 1.0, 1e-15) + integrate(&w, 1.0, t, 1e-15)
    }
}

/// `Λ` on any [`Real`] scalar.
pub fn lambda<S: Real>(t: &S, eps0: f64) -> S {
    if eps0 == 1.0 {
        return t.atan();
    }
    t.compose_with(|v, d| {
        let mut c = vec![0.0; d + 1];
        c[0] = lambda_value(v, eps0);
        if d > 0 {
            let dv = taylor::japanese_pow(v, -1.0 - eps0, d - 1);
            for n in 1..=d {
                c[n] = dv[n - 1] / n as f64;
            }
        }
        c
    })
}

/// `Λ'(t) = ⟨t⟩^{-1-ε₀}`.
pub fn lambda_prime<S: Real>(t: &S, eps0: f64) -> S {
    t.japanese(-1.0 - eps0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet, Var};

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(&0.1, 0.25), 1.0);
        assert_eq!(cutoff(&-0.125, 0.25), 1.0);
        assert_eq!(cutoff(&0.25, 0.25), 0.0);
        let mid = cutoff(&0.1875, 0.25);
        assert!((mid - 0.5).abs() < 1e-14);
        assert_eq!(high_pass(&8.0, 8.0), 0.0);
        assert_eq!(high_pass(&-16.0, 8.0), 1.0);
        assert_eq!(bump(&1.0), 1.0);
        assert_eq!(bump(&2.0), 0.0);
        assert_eq!(bump_wide(&2.0), 1.0);
    }

    #[test]
    fn lambda_general_exponent_matches_quadrature_and_derivative() {
        let eps0 = 0.5;
        let v = lambda_value(2.0, eps0);
        // Λ(t) for ε₀ = 1/2 has no elementary form; compare with a fine midpoint rule
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mid: f64 = (0..n).map(|i| (1.0 + ((i as f64 + 0.5) * h).powi(2)).powf(-0.75) * h).sum();
        assert!((v - mid).abs() < 1e-9);
        let j = lambda(&Jet::variable(Var::Xi, 0.7, 3), eps0);
        assert!((j.partial([0, 0, 1]) - (1.0f64 + 0.49).powf(-0.75)).abs() < 1e-14);
        assert!((j.value() - lambda_value(0.7, eps0)).abs() < 1e-15);
        assert!((lambda_value(1.0, 1.0) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }
}
