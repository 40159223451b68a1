//! Closed-form series solution for constant-flux diffusion in a sphere.
//!
//! This is the independent oracle for the finite-volume reference solver. For
//! the nondimensional problem ∂ĉ/∂t̂ = α∇²ĉ with ĉ(r̂,0)=1, ∂_r̂ĉ(0,t̂)=0,
//! ∂_r̂ĉ(1,t̂)=β, the classical result (Crank, *The Mathematics of
//! Diffusion*, 2nd ed., §6.3, eq. 6.40, rescaled to unit radius and unit
//! initial value) is
//!
//! ```text
//!   ĉ(r̂,t̂) = 1 + β [ 3αt̂ + r̂²/2 − 3/10
//!             − (2/r̂) Σ_n  sin(λ_n r̂)/(λ_n² sin λ_n) · exp(−λ_n² α t̂) ],
//! ```
//!
//! where λ_n are the positive roots of tan λ = λ. At r̂ = 0 the summand's
//! limiting form 2/(λ_n sin λ_n)·exp(−λ_n²αt̂) applies.

use crate::error::{Error, Result};

/// Compute the first `n` positive roots of tan λ = λ.
///
/// Root k lies in (kπ, kπ + π/2); the sign of f(λ) = sin λ − λ cos λ differs
/// at the bracket ends, so plain bisection converges unconditionally.
pub fn flux_eigenvalues(n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let f = |l: f64| l.sin() - l * l.cos();
    (1..=n)
        .map(|k| {
            let mut lo = k as f64 * PI;
            let mut hi = lo + PI / 2.0;
            let f_lo = f(lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break; // interval below f64 resolution
                }
                if (f(mid) > 0.0) == (f_lo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Series evaluator with precomputed eigenvalues and coefficients.
#[derive(Debug, Clone)]
pub struct FluxSeries {
    eigenvalues: Vec<f64>,
    /// 1/(λ_n² · sin λ_n)
    coeff: Vec<f64>,
}

impl FluxSeries {
    /// Precompute `n_terms` eigenvalues (at least 20 per the oracle
    /// contract; more terms extend accuracy toward t̂ → 0).
    pub fn new(n_terms: usize) -> Result<Self> {
        if n_terms < 20 {
            return Err(Error::Domain(format!(
                "series needs at least 20 terms, got {n_terms}"
            )));
        }
        let eigenvalues = flux_eigenvalues(n_terms);
        let coeff = eigenvalues.iter().map(|&l| 1.0 / (l * l * l.sin())).collect();
        Ok(Self { eigenvalues, coeff })
    }

    /// Evaluate ĉ(r̂, t̂).
    ///
    /// Terms are summed until the remainder bound drops below 1e-16 or the
    /// precomputed eigenvalues run out, so accuracy near t̂ = 0 is limited by
    /// the number of terms requested at construction.
    pub fn eval(&self, alpha: f64, beta: f64, r: f64, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("r̂ = {r} outside [0, 1]")));
        }
        if t < 0.0 {
            return Err(Error::Domain(format!("t̂ = {t} negative")));
        }
        if beta == 0.0 {
            return Ok(1.0);
        }
        // At t̂ = 0 the solution is the initial condition exactly; the
        // truncated series would instead expose its O(1/n_terms) tail
        // (the eigenfunction expansion of r̂²/2 − 3/10 converges slowly
        // without the exponential damping).
        if t == 0.0 {
            return Ok(1.0);
        }
        let mut sum = 0.0;
        for (&l, &c) in self.eigenvalues.iter().zip(&self.coeff) {
            let decay = (-l * l * alpha * t).exp();
            // |sin(λr̂)/r̂| ≤ min(λ, 1/r̂) and |sin λ_n| ≥ 0.97 for all n,
            // so the remaining terms are bounded by ~2·decay/λ.
            let term = if r > 0.0 {
                2.0 / r * (l * r).sin() * c * decay
            } else {
                2.0 / l.sin() / l * decay
            };
            sum += term;
            if 2.2 * decay / l < 1e-16 {
                break;
            }
        }
        Ok(1.0 + beta * (3.0 * alpha * t + 0.5 * r * r - 0.3 - sum))
    }

    /// Evaluate on a tensor grid; returns row-major values indexed
    /// `[i_t * rs.len() + i_r]`.
    pub fn eval_grid(&self, alpha: f64, beta: f64, rs: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rs.len() * ts.len());
        for &t in ts {
            for &r in rs {
                out.push(self.eval(alpha, beta, r, t)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literature values for the first six roots of tan λ = λ (Carslaw &
    /// Jaeger, *Conduction of Heat in Solids*, Appendix IV).
    const KNOWN_ROOTS: [f64; 6] = [
        4.493409457909064,
        7.725251836937707,
        10.904121659428899,
        14.066193912831473,
        17.220755271930768,
        20.371302959287563,
    ];

    #[test]
    fn eigenvalues_match_literature() {
        let eigs = flux_eigenvalues(6);
        for (got, want) in eigs.iter().zip(KNOWN_ROOTS) {
            assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        }
    }

    #[test]
    fn eigenvalues_satisfy_defining_equation() {
        for l in flux_eigenvalues(50) {
            assert!((l.sin() - l * l.cos()).abs() < 1e-9 * l, "λ = {l}");
        }
    }

    /// Σ 2/λ_n² = 1/5 — the eigenfunction-expansion identity that makes the
    /// series reproduce the initial condition at the surface. The λ_n grow
    /// like (n+½)π, so the N-term partial sum misses ~0.2026/N.
    #[test]
    fn eigenvalue_sum_identity() {
        let n = 4000;
        let s: f64 = flux_eigenvalues(n).iter().map(|l| 2.0 / (l * l)).sum();
        let tail = 0.2 - s;
        let approx_tail = 0.2026 / n as f64;
        assert!(tail > 0.0 && (tail - approx_tail).abs() < 0.05 * approx_tail,
            "partial sum {s}, tail {tail:.3e}, expected ~{approx_tail:.3e}");
    }

    #[test]
    fn zero_flux_is_identically_one() {
        let s = FluxSeries::new(20).unwrap();
        for &(r, t) in &[(0.0, 0.0), (0.5, 0.3), (1.0, 1.0)] {
            assert_eq!(s.eval(2.0, 0.0, r, t).unwrap(), 1.0);
        }
    }

    /// After transients decay, the profile is the steady parabola riding on
    /// the linear-in-time mean: surface minus center equals β/2.
    #[test]
    fn quasi_steady_parabolic_gap() {
        let s = FluxSeries::new(40).unwrap();
        let (alpha, beta, t) = (1.0, 0.7, 3.0);
        let gap = s.eval(alpha, beta, 1.0, t).unwrap() - s.eval(alpha, beta, 0.0, t).unwrap();
        assert!((gap - beta / 2.0).abs() < 1e-12, "gap = {gap}");
    }

    /// The exact solution conserves mass: 3∫₀¹ r̂²ĉ dr̂ = 1 + 3αβt̂.
    /// Checked by Simpson quadrature, which is independent of the series'
    /// own polynomial terms.
    #[test]
    fn series_mass_balance() {
        let s = FluxSeries::new(200).unwrap();
        let (alpha, beta, t) = (0.7, 0.4, 0.3);
        let n = 2000; // Simpson panels (even)
        let h = 1.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let r = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            integral += w * r * r * s.eval(alpha, beta, r, t).unwrap();
        }
        integral *= h / 3.0;
        let mean = 3.0 * integral;
        let expect = 1.0 + 3.0 * alpha * beta * t;
        assert!((mean - expect).abs() < 1e-9, "mean {mean}, expect {expect}");
    }

    #[test]
    fn domain_errors() {
        let s = FluxSeries::new(20).unwrap();
        assert!(s.eval(1.0, 1.0, -0.1, 0.5).is_err());
        assert!(s.eval(1.0, 1.0, 1.1, 0.5).is_err());
        assert!(s.eval(1.0, 1.0, 0.5, -0.01).is_err());
        assert!(FluxSeries::new(19).is_err());
    }

    /// Center value via the limiting form agrees with a small-r̂ evaluation.
    #[test]
    fn center_limit_consistent() {
        let s = FluxSeries::new(100).unwrap();
        let c0 = s.eval(0.8, -0.5, 0.0, 0.2).unwrap();
        let c_eps = s.eval(0.8, -0.5, 1e-6, 0.2).unwrap();
        assert!((c0 - c_eps).abs() < 1e-9, "c0 = {c0}, c(1e-6) = {c_eps}");
    }
}
