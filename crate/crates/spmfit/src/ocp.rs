//! Open-circuit potential curves for the two electrodes.
//!
//! Each electrode carries an equilibrium potential `U(x)` as a function of
//! surface stoichiometry. A curve is stored either as a closed-form sum of
//! activation terms (`kind = "terms"`) or as a monotone-interpolated lookup
//! table (`kind = "table"`); both forms evaluate through the same interface
//! so the terminal-voltage model is agnostic to the representation.
//!
//! The built-in curves are transcriptions of published fits:
//!
//! * `lco_positive` — the LiCoO2 open-circuit potential measured at Bellcore
//!   and distributed with Doyle & Newman's `dualfoil 5.1` (subroutine
//!   `occprm.f`), expressed as a constant plus six `tanh` sigmoids. Two extra
//!   terms append a high-stoichiometry knee so the curve keeps falling toward
//!   the end-of-discharge region instead of extrapolating the mid-range
//!   plateau; without it a full discharge would never reach a 2.7 V cutoff.
//! * `graphite_negative` — the LG M50 graphite fit of Chen et al.,
//!   J. Electrochem. Soc. 167 080534 (2020), doi:10.1149/1945-7111/ab9050,
//!   one exponential plus three `tanh` sigmoids around a constant offset.
//!
//! Tables use Fritsch–Carlson monotone cubic interpolation (SIAM J. Numer.
//! Anal. 17(2), 1980): on monotone data the interpolant is monotone, so a
//! tabulated curve can never introduce spurious local extrema that would
//! create artificial plateaus or sign flips in dV/dt.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation shape of a single closed-form term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    /// `amp` (the `a`/`b` coefficients are ignored).
    Const,
    /// `amp * tanh(a*x + b)`.
    Tanh,
    /// `amp * exp(a*x + b)`.
    Exp,
}

/// One additive term of a closed-form potential curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpTerm {
    #[serde(rename = "type")]
    pub kind: TermKind,
    pub amp: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

impl OcpTerm {
    fn eval(&self, x: f64) -> f64 {
        match self.kind {
            TermKind::Const => self.amp,
            TermKind::Tanh => self.amp * (self.a * x + self.b).tanh(),
            TermKind::Exp => self.amp * (self.a * x + self.b).exp(),
        }
    }
}

/// Functional representation of a curve: closed form or lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OcpRepr {
    /// Sum of activation terms evaluated directly.
    Terms { terms: Vec<OcpTerm> },
    /// Sampled `(x, U)` pairs with strictly increasing `x`, evaluated by
    /// monotone cubic interpolation.
    Table { table: Vec<[f64; 2]> },
}

/// An open-circuit potential curve with its validity domain and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpCurve {
    /// Stable identifier, e.g. `lco_positive`.
    pub id: String,
    /// Citation for where the fit comes from.
    pub source: String,
    /// Stoichiometry interval `[lo, hi]` on which the fit is trusted.
    pub domain: [f64; 2],
    #[serde(flatten)]
    pub repr: OcpRepr,
}

impl OcpCurve {
    /// Built-in positive-electrode curve (LiCoO2, dualfoil/Bellcore).
    pub fn builtin_positive() -> Self {
        let curve: OcpCurve = serde_json::from_str(include_str!("../data/ocp/lco_positive.json"))
            .expect("embedded positive OCP curve parses");
        curve.validate().expect("embedded positive OCP curve is valid");
        curve
    }

    /// Built-in negative-electrode curve (graphite, Chen 2020).
    pub fn builtin_negative() -> Self {
        let curve: OcpCurve =
            serde_json::from_str(include_str!("../data/ocp/graphite_negative.json"))
                .expect("embedded negative OCP curve parses");
        curve.validate().expect("embedded negative OCP curve is valid");
        curve
    }

    /// Load a curve from a JSON file and validate it.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let curve: OcpCurve = serde_json::from_str(&text)?;
        curve.validate()?;
        Ok(curve)
    }

    /// Check structural invariants; called by [`OcpCurve::load`].
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Format(format!(
                "curve '{}': domain [{lo}, {hi}] is not a finite increasing interval",
                self.id
            )));
        }
        match &self.repr {
            OcpRepr::Terms { terms } => {
                if terms.is_empty() {
                    return Err(Error::Format(format!("curve '{}': no terms", self.id)));
                }
                for (i, t) in terms.iter().enumerate() {
                    if !(t.amp.is_finite() && t.a.is_finite() && t.b.is_finite()) {
                        return Err(Error::Format(format!(
                            "curve '{}': term {i} has non-finite coefficients",
                            self.id
                        )));
                    }
                }
            }
            OcpRepr::Table { table } => {
                if table.len() < 2 {
                    return Err(Error::Format(format!(
                        "curve '{}': table needs at least two points",
                        self.id
                    )));
                }
                for w in table.windows(2) {
                    if !(w[0][0] < w[1][0]) {
                        return Err(Error::Format(format!(
                            "curve '{}': table abscissae must be strictly increasing",
                            self.id
                        )));
                    }
                }
                if table.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(Error::Format(format!(
                        "curve '{}': table contains non-finite entries",
                        self.id
                    )));
                }
                let first = table[0][0];
                let last = table[table.len() - 1][0];
                if (first - lo).abs() > 1e-9 || (last - hi).abs() > 1e-9 {
                    return Err(Error::Format(format!(
                        "curve '{}': table span [{first}, {last}] disagrees with domain",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluate the potential at stoichiometry `x`, erroring outside the domain.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let [lo, hi] = self.domain;
        if !x.is_finite() || x < lo || x > hi {
            return Err(Error::CurveDomain(format!(
                "curve '{}': x = {x} outside domain [{lo}, {hi}]",
                self.id
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    /// Evaluate without the domain check. For `x` outside a table's span the
    /// nearest endpoint value is used (closed forms extrapolate naturally).
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        match &self.repr {
            OcpRepr::Terms { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            OcpRepr::Table { table } => eval_monotone_cubic(table, x),
        }
    }

    /// Evaluate at `x` clamped into the domain; the flag reports whether
    /// clamping was applied.
    pub fn eval_clamped(&self, x: f64) -> (f64, bool) {
        let [lo, hi] = self.domain;
        let xc = x.clamp(lo, hi);
        (self.eval_unchecked(xc), xc != x)
    }

    /// Probe the curve on `n` interior points and report whether it is
    /// strictly decreasing there.
    pub fn is_strictly_decreasing(&self, n: usize) -> bool {
        assert!(n >= 2, "need at least two probe points");
        let [lo, hi] = self.domain;
        let mut prev = f64::INFINITY;
        for i in 0..n {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
            let u = self.eval_unchecked(x);
            if u >= prev {
                return false;
            }
            prev = u;
        }
        true
    }

    /// Resample this curve into an equivalent table representation with `n`
    /// uniformly spaced points (inclusive of the domain endpoints).
    pub fn tabulated(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("table needs at least two points".into()));
        }
        let [lo, hi] = self.domain;
        let table: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                [x, self.eval_unchecked(x)]
            })
            .collect();
        let curve = OcpCurve {
            id: self.id.clone(),
            source: self.source.clone(),
            domain: self.domain,
            repr: OcpRepr::Table { table },
        };
        curve.validate()?;
        Ok(curve)
    }
}

/// Fritsch–Carlson monotone cubic interpolation on `(x, u)` pairs.
///
/// Tangents start from centered slope averages (one-sided at the ends), are
/// zeroed wherever the neighbouring secants change sign, and are shrunk onto
/// the circle `a^2 + b^2 = 9` of the Fritsch–Carlson monotonicity region.
/// Everything is computed locally from the four points around the query, so
/// evaluation is stateless and O(log n) per call.
fn eval_monotone_cubic(table: &[[f64; 2]], x: f64) -> f64 {
    let n = table.len();
    debug_assert!(n >= 2);
    if x <= table[0][0] {
        return table[0][1];
    }
    if x >= table[n - 1][0] {
        return table[n - 1][1];
    }
    // Index of the interval [x_i, x_{i+1}] containing x.
    let i = match table.partition_point(|p| p[0] <= x) {
        0 => 0,
        k => (k - 1).min(n - 2),
    };
    let (x0, u0) = (table[i][0], table[i][1]);
    let (x1, u1) = (table[i + 1][0], table[i + 1][1]);
    let h = x1 - x0;
    let d = (u1 - u0) / h;

    let secant = |j: usize| (table[j + 1][1] - table[j][1]) / (table[j + 1][0] - table[j][0]);
    let tangent = |j: usize| -> f64 {
        if j == 0 {
            secant(0)
        } else if j == n - 1 {
            secant(n - 2)
        } else {
            let dl = secant(j - 1);
            let dr = secant(j);
            if dl * dr <= 0.0 {
                0.0
            } else {
                0.5 * (dl + dr)
            }
        }
    };

    let mut m0 = tangent(i);
    let mut m1 = tangent(i + 1);
    if d == 0.0 {
        m0 = 0.0;
        m1 = 0.0;
    } else {
        let a = m0 / d;
        let b = m1 / d;
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m0 = tau * a * d;
            m1 = tau * b * d;
        }
    }

    // Cubic Hermite basis on the unit interval.
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    u0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + m0 * h * (t3 - 2.0 * t2 + t)
        + u1 * (-2.0 * t3 + 3.0 * t2)
        + m1 * h * (t3 - t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_curves_parse_and_validate() {
        let p = OcpCurve::builtin_positive();
        assert_eq!(p.id, "lco_positive");
        assert_eq!(p.domain, [0.35, 0.9999]);
        assert!(matches!(&p.repr, OcpRepr::Terms { terms } if terms.len() == 9));

        let n = OcpCurve::builtin_negative();
        assert_eq!(n.id, "graphite_negative");
        assert_eq!(n.domain, [0.0001, 0.99]);
        assert!(matches!(&n.repr, OcpRepr::Terms { terms } if terms.len() == 5));
    }

    /// The positive curve at y = 0.5 must reproduce the dualfoil expression,
    /// recomputed here from independently transcribed coefficients. At
    /// mid-stoichiometry the appended knee terms must be inactive.
    #[test]
    fn positive_curve_matches_hand_transcription() {
        let p = OcpCurve::builtin_positive();
        let y: f64 = 0.5;
        let expected = 2.16216
            + 0.07645 * (30.834 - 54.4806 * y).tanh()
            + 2.1581 * (52.294 - 50.294 * y).tanh()
            - 0.14169 * (11.0923 - 19.8543 * y).tanh()
            + 0.2051 * (1.4684 - 5.4888 * y).tanh()
            + 0.2531 * ((-y + 0.56478) / 0.1316).tanh()
            - 0.02167 * ((y - 0.525) / 0.006).tanh();
        let knee = -0.75 * (1.0 + (125.0 * (y - 0.99)).tanh());
        let got = p.eval(y).unwrap();
        assert!(
            (got - (expected + knee)).abs() < 1e-9,
            "got {got}, expected {}",
            expected + knee
        );
        assert!(knee.abs() < 1e-12, "knee must be dormant at y=0.5");
        assert!((3.9..4.4).contains(&got), "plateau out of range: {got}");
    }

    /// The negative curve must reproduce the Chen 2020 graphite fit written
    /// in its original centered form.
    #[test]
    fn negative_curve_matches_hand_transcription() {
        let n = OcpCurve::builtin_negative();
        for &x in &[0.05_f64, 0.3, 0.6, 0.9] {
            let expected = 1.9793 * (-39.3631 * x).exp() + 0.2482
                - 0.0909 * (29.8538 * (x - 0.1234)).tanh()
                - 0.04478 * (14.9159 * (x - 0.2769)).tanh()
                - 0.0205 * (30.4444 * (x - 0.6103)).tanh();
            let got = n.eval(x).unwrap();
            assert!(
                (got - expected).abs() < 1e-9,
                "x={x}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn negative_curve_is_strictly_decreasing() {
        let n = OcpCurve::builtin_negative();
        assert!(n.is_strictly_decreasing(1000));
    }

    /// The knee must pull the positive curve below a 2.7 V cutoff at the top
    /// of its domain while leaving the 3.9+ V plateau untouched.
    #[test]
    fn positive_knee_reaches_cutoff() {
        let p = OcpCurve::builtin_positive();
        assert!(p.eval(0.9999).unwrap() < 2.7);
        assert!(p.eval(0.6).unwrap() > 3.9);
    }

    /// Swapping a closed-form curve for its 2000-point table must not move
    /// any potential by more than 1 mV.
    #[test]
    fn table_swap_is_within_one_millivolt() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for curve in [OcpCurve::builtin_positive(), OcpCurve::builtin_negative()] {
            let table = curve.tabulated(2000).unwrap();
            assert!(matches!(table.repr, OcpRepr::Table { .. }));
            let [lo, hi] = curve.domain;
            for _ in 0..500 {
                let x = rng.random_range(lo..hi);
                let exact = curve.eval(x).unwrap();
                let interp = table.eval(x).unwrap();
                assert!(
                    (exact - interp).abs() < 1e-3,
                    "curve {} at x={x}: exact {exact}, table {interp}",
                    curve.id
                );
            }
        }
    }

    /// Monotone interpolation must preserve the monotonicity of the data:
    /// tabulating the decreasing graphite curve cannot create local rises.
    #[test]
    fn tabulated_negative_stays_monotone() {
        let table = OcpCurve::builtin_negative().tabulated(400).unwrap();
        assert!(table.is_strictly_decreasing(5000));
    }

    #[test]
    fn domain_errors_and_clamping() {
        let p = OcpCurve::builtin_positive();
        assert!(matches!(
            p.eval(0.2),
            Err(Error::CurveDomain { .. })
        ));
        assert!(matches!(p.eval(1.01), Err(Error::CurveDomain { .. })));
        assert!(matches!(p.eval(f64::NAN), Err(Error::CurveDomain { .. })));

        let (u_clamped, clamped) = p.eval_clamped(0.2);
        assert!(clamped);
        assert_eq!(u_clamped, p.eval(0.35).unwrap());
        let (_, unclamped) = p.eval_clamped(0.5);
        assert!(!unclamped);
    }

    #[test]
    fn malformed_curves_are_rejected() {
        let mut bad_domain = OcpCurve::builtin_positive();
        bad_domain.domain = [0.9, 0.3];
        assert!(bad_domain.validate().is_err());

        let no_terms = OcpCurve {
            id: "empty".into(),
            source: "test".into(),
            domain: [0.0, 1.0],
            repr: OcpRepr::Terms { terms: vec![] },
        };
        assert!(no_terms.validate().is_err());

        let unsorted = OcpCurve {
            id: "unsorted".into(),
            source: "test".into(),
            domain: [0.0, 1.0],
            repr: OcpRepr::Table {
                table: vec![[0.0, 1.0], [0.5, 0.8], [0.4, 0.7], [1.0, 0.5]],
            },
        };
        assert!(unsorted.validate().is_err());

        let span_mismatch = OcpCurve {
            id: "span".into(),
            source: "test".into(),
            domain: [0.0, 1.0],
            repr: OcpRepr::Table {
                table: vec![[0.1, 1.0], [0.9, 0.5]],
            },
        };
        assert!(span_mismatch.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        for curve in [OcpCurve::builtin_positive(), OcpCurve::builtin_negative()] {
            let text = serde_json::to_string(&curve).unwrap();
            let back: OcpCurve = serde_json::from_str(&text).unwrap();
            assert_eq!(curve, back);
        }
        // And the table variant round-trips through its tagged encoding.
        let table = OcpCurve::builtin_negative().tabulated(50).unwrap();
        let text = serde_json::to_string(&table).unwrap();
        assert!(text.contains("\"kind\":\"table\""));
        let back: OcpCurve = serde_json::from_str(&text).unwrap();
        assert_eq!(table, back);
    }
}
