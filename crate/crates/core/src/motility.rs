//! Motility functions γ, their primitives Γ and classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance of the adaptive Simpson rule used when no closed-form primitive
/// exists.
pub const QUADRATURE_TOLERANCE: f64 = 1e-12;

/// Piecewise-cubic Hermite table with C¹ linear extension outside the knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicTable {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CubicTable {
    /// Builds a table from knots `s`, values `γ(s)` and optional derivatives.
    /// Missing derivatives are filled with Fritsch–Butland monotone
    /// slopes, which keeps monotone data monotone.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, slopes: Option<Vec<f64>>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::Config(format!(
                "motility table needs at least 2 knots with matching values (got {} knots, {} values)",
                n,
                values.len()
            )));
        }
        if knots.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::Config("motility table entries must be finite".into()));
        }
        if knots[0] <= 0.0 || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "motility table knots must be positive and strictly increasing".into(),
            ));
        }
        if let Some(v) = values.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Config(format!("motility table value {v} is not positive")));
        }
        let slopes = match slopes {
            Some(d) => {
                if d.len() != n || d.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(
                        "motility table derivatives must be finite, one per knot".into(),
                    ));
                }
                d
            }
            None => monotone_slopes(&knots, &values),
        };
        let t = CubicTable { knots, values, slopes };
        let (s0, g0, d0) = (t.knots[0], t.values[0], t.slopes[0]);
        if g0 - d0 * s0 <= 0.0 {
            return Err(Error::Config(format!(
                "motility table left extension γ(s) = {g0} + {d0}·(s − {s0}) is not positive on (0, {s0}]"
            )));
        }
        if t.slopes[n - 1] < 0.0 {
            return Err(Error::Config(
                "motility table right extension has negative slope and becomes non-positive".into(),
            ));
        }
        // the interpolant itself must stay positive between knots
        for i in 0..n - 1 {
            let (a, b) = (t.knots[i], t.knots[i + 1]);
            for j in 1..64 {
                let s = a + (b - a) * j as f64 / 64.0;
                let g = t.eval(s);
                if g <= 0.0 {
                    return Err(Error::Config(format!(
                        "motility table interpolant is not positive at s = {s} (γ = {g})"
                    )));
                }
            }
        }
        Ok(t)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.knots.len();
        match self.knots.partition_point(|&k| k <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.knots.len();
        if s <= self.knots[0] {
            return self.values[0] + self.slopes[0] * (s - self.knots[0]);
        }
        if s >= self.knots[n - 1] {
            return self.values[n - 1] + self.slopes[n - 1] * (s - self.knots[n - 1]);
        }
        let i = self.segment(s);
        let h = self.knots[i + 1] - self.knots[i];
        let t = (s - self.knots[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i] + h10 * h * self.slopes[i] + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1]
    }

    fn deriv(&self, s: f64) -> f64 {
        let n = self.knots.len();
        if s <= self.knots[0] {
            return self.slopes[0];
        }
        if s >= self.knots[n - 1] {
            return self.slopes[n - 1];
        }
        let i = self.segment(s);
        let h = self.knots[i + 1] - self.knots[i];
        let t = (s - self.knots[i]) / h;
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        d00 * self.values[i] + d10 * self.slopes[i] + d01 * self.values[i + 1] + d11 * self.slopes[i + 1]
    }

    /// Monotonicity of the interpolant, decided by the sign of the derivative
    /// on a dense sample of each segment and on the extensions.
    fn is_monotone(&self) -> bool {
        if self.slopes[0] < 0.0 || self.slopes[self.slopes.len() - 1] < 0.0 {
            return false;
        }
        self.knots
            .windows(2)
            .all(|w| (0..=64).all(|j| self.deriv(w[0] + (w[1] - w[0]) * j as f64 / 64.0) >= -1e-12))
    }
}

fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for i in 1..n - 1 {
        m[i] = if d[i - 1] * d[i] <= 0.0 {
            0.0
        } else {
            // weighted harmonic mean (Fritsch–Butland)
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            (w1 + w2) / (w1 / d[i - 1] + w2 / d[i])
        };
    }
    m
}

/// A positive motility function γ on (0, ∞).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum MotilityFunction {
    /// γ ≡ c.
    Constant { c: f64 },
    /// γ(s) = scale·s.
    Linear { scale: f64 },
    /// γ(s) = log(1 + s).
    Log1p,
    /// γ(s) = base + amp·sin s, with base > |amp|.
    Sine { base: f64, amp: f64 },
    /// γ(s) = exp(−rate·s).
    Exponential { rate: f64 },
    /// User-supplied piecewise-cubic table.
    Table(CubicTable),
}

/// γ and γ′ at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaValue {
    pub value: f64,
    pub deriv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotilityClassification {
    pub monotone_nondecreasing: bool,
    /// `f64::INFINITY` encodes an unbounded γ.
    pub gamma_inf_estimate: f64,
    pub nondegenerate_for_tau: bool,
    pub gamma_star_estimate: f64,
    pub warnings: Vec<String>,
}

impl MotilityFunction {
    pub fn sine() -> Self {
        MotilityFunction::Sine { base: 2.0, amp: 1.0 }
    }

    pub fn exponential() -> Self {
        MotilityFunction::Exponential { rate: 1.0 }
    }

    pub fn linear() -> Self {
        MotilityFunction::Linear { scale: 1.0 }
    }

    /// Checks parameter ranges so that γ > 0 on (0, ∞).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            MotilityFunction::Constant { c } if !(c > 0.0 && c.is_finite()) => {
                bad(format!("constant motility needs c > 0, got {c}"))
            }
            MotilityFunction::Linear { scale } if !(scale > 0.0 && scale.is_finite()) => {
                bad(format!("linear motility needs scale > 0, got {scale}"))
            }
            MotilityFunction::Sine { base, amp } if !(base.is_finite() && amp.is_finite() && base > amp.abs()) => {
                bad(format!("sine motility needs base > |amp|, got base {base}, amp {amp}"))
            }
            MotilityFunction::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                bad(format!("exponential motility needs rate > 0, got {rate}"))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MotilityFunction::Constant { c } => format!("constant({c})"),
            MotilityFunction::Linear { scale } => format!("linear({scale})"),
            MotilityFunction::Log1p => "log1p".into(),
            MotilityFunction::Sine { base, amp } => format!("sine({base}, {amp})"),
            MotilityFunction::Exponential { rate } => format!("exponential({rate})"),
            MotilityFunction::Table(t) => format!("table({} knots)", t.knots.len()),
        }
    }

    /// γ(s) without domain checks; callers guarantee s > 0.
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            MotilityFunction::Constant { c } => *c,
            MotilityFunction::Linear { scale } => scale * s,
            MotilityFunction::Log1p => s.ln_1p(),
            MotilityFunction::Sine { base, amp } => base + amp * s.sin(),
            MotilityFunction::Exponential { rate } => (-rate * s).exp(),
            MotilityFunction::Table(t) => t.eval(s),
        }
    }

    /// γ′(s) without domain checks.
    pub fn deriv(&self, s: f64) -> f64 {
        match self {
            MotilityFunction::Constant { .. } => 0.0,
            MotilityFunction::Linear { scale } => *scale,
            MotilityFunction::Log1p => 1.0 / (1.0 + s),
            MotilityFunction::Sine { amp, .. } => amp * s.cos(),
            MotilityFunction::Exponential { rate } => -rate * (-rate * s).exp(),
            MotilityFunction::Table(t) => t.deriv(s),
        }
    }

    fn primitive(&self, s: f64) -> Option<f64> {
        Some(match self {
            MotilityFunction::Constant { c } => c * s,
            MotilityFunction::Linear { scale } => 0.5 * scale * s * s,
            MotilityFunction::Log1p => (1.0 + s) * s.ln_1p() - s,
            MotilityFunction::Sine { base, amp } => base * s - amp * s.cos(),
            MotilityFunction::Exponential { rate } => -(-rate * s).exp() / rate,
            MotilityFunction::Table(_) => return None,
        })
    }

    pub fn has_closed_form_primitive(&self) -> bool {
        !matches!(self, MotilityFunction::Table(_))
    }

    /// Signed integral `∫_a^b γ`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        match (self, self.primitive(a), self.primitive(b)) {
            (MotilityFunction::Sine { base, amp }, _, _) => {
                // cos a − cos b = 2 sin((a+b)/2) sin((b−a)/2), avoids cancellation
                base * (b - a) + 2.0 * amp * (0.5 * (a + b)).sin() * (0.5 * (b - a)).sin()
            }
            (MotilityFunction::Exponential { rate }, _, _) => {
                // e^{−ra}(1 − e^{−r(b−a)}) / r
                -(-rate * a).exp() * (-rate * (b - a)).exp_m1() / rate
            }
            (_, Some(pa), Some(pb)) => pb - pa,
            _ => self.integral_quadrature(a, b),
        }
    }

    /// `∫_a^b γ` by adaptive Simpson, regardless of closed forms.
    pub fn integral_quadrature(&self, a: f64, b: f64) -> f64 {
        adaptive_simpson(&|s| self.eval(s), a, b, QUADRATURE_TOLERANCE)
    }

    pub fn declared_monotone(&self) -> bool {
        match self {
            MotilityFunction::Constant { .. } | MotilityFunction::Linear { .. } | MotilityFunction::Log1p => true,
            MotilityFunction::Sine { amp, .. } => *amp == 0.0,
            MotilityFunction::Exponential { .. } => false,
            MotilityFunction::Table(t) => t.is_monotone(),
        }
    }

    /// Declared `liminf_{s→∞} γ(s)`.
    pub fn declared_gamma_inf(&self) -> f64 {
        match self {
            MotilityFunction::Constant { c } => *c,
            MotilityFunction::Linear { .. } | MotilityFunction::Log1p => f64::INFINITY,
            MotilityFunction::Sine { base, amp } => base - amp.abs(),
            MotilityFunction::Exponential { .. } => 0.0,
            MotilityFunction::Table(t) => {
                let n = t.knots.len();
                if t.slopes[n - 1] > 0.0 {
                    f64::INFINITY
                } else {
                    t.values[n - 1]
                }
            }
        }
    }

    /// γ(s) and γ′(s) for s > 0.
    pub fn gamma_eval(&self, s: f64) -> Result<GammaValue> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("motility evaluated at s = {s}, need s > 0")));
        }
        Ok(GammaValue {
            value: self.eval(s),
            deriv: self.deriv(s),
        })
    }

    /// `Γ(s) = ∫_{v_floor}^s γ` for `s ≥ v_floor > 0`.
    pub fn big_gamma(&self, s: f64, v_floor: f64) -> Result<f64> {
        if !(v_floor > 0.0 && v_floor.is_finite()) {
            return Err(Error::Domain(format!("v_floor must be positive, got {v_floor}")));
        }
        if !(s >= v_floor && s.is_finite()) {
            return Err(Error::Domain(format!(
                "big_gamma needs s ≥ v_floor, got s = {s}, v_floor = {v_floor}"
            )));
        }
        Ok(self.integral(v_floor, s))
    }

    /// Samples γ on `[v_floor, s_max]` and compares against the declared
    /// metadata. Declared values win; disagreements become warnings.
    pub fn classify(&self, tau: f64, v_floor: f64, s_max: f64) -> Result<MotilityClassification> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
        if !(v_floor > 0.0 && s_max >= 10.0 * v_floor && s_max.is_finite()) {
            return Err(Error::Domain(format!(
                "classification needs 0 < v_floor and s_max ≥ 10·v_floor, got v_floor = {v_floor}, s_max = {s_max}"
            )));
        }
        let samples = sample_points(v_floor, s_max, 4000);
        let empirical_monotone = samples.iter().all(|&s| self.deriv(s) >= -1e-12);
        let gamma_star = samples.iter().fold(f64::INFINITY, |m, &s| m.min(self.eval(s)));
        let tail: Vec<f64> = (0..=2000)
            .map(|j| 0.5 * s_max + 0.5 * s_max * j as f64 / 2000.0)
            .collect();
        let tail_min = tail.iter().fold(f64::INFINITY, |m, &s| m.min(self.eval(s)));

        let monotone = self.declared_monotone();
        let gamma_inf = self.declared_gamma_inf();
        let mut warnings = Vec::new();
        if monotone != empirical_monotone {
            warnings.push(format!(
                "{}: declared monotone = {monotone} but sampling on [{v_floor}, {s_max}] gives {empirical_monotone}",
                self.id()
            ));
        }
        if gamma_inf.is_finite() && (tail_min - gamma_inf).abs() > 0.05 * gamma_inf.max(1.0) {
            warnings.push(format!(
                "{}: declared gamma_inf = {gamma_inf} but tail minimum on [{}, {s_max}] is {tail_min}",
                self.id(),
                0.5 * s_max
            ));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(MotilityClassification {
            monotone_nondecreasing: monotone,
            gamma_inf_estimate: gamma_inf,
            nondegenerate_for_tau: gamma_inf > 1.0 / tau,
            gamma_star_estimate: gamma_star,
            warnings,
        })
    }

    /// Largest `s − ε·Γ(s)` over log-spaced samples of `[v_floor, s_max]`,
    /// i.e. the smallest `s_ε` with `s ≤ εΓ(s) + s_ε` on the samples.
    pub fn dominance_threshold(&self, eps: f64, v_floor: f64, s_max: f64) -> f64 {
        sample_points(v_floor, s_max, 20000)
            .into_iter()
            .map(|s| s - eps * self.integral(v_floor, s))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Maximum violation of the central-difference derivative check at the
/// given points: `|(γ(s+h) − γ(s−h))/2h − γ′(s)| / (1 + |γ′(s)|)` with
/// `h = 1e−5·s`.
pub fn derivative_check(mf: &MotilityFunction, points: &[f64]) -> f64 {
    points
        .iter()
        .map(|&s| {
            let h = 1e-5 * s;
            let fd = (mf.eval(s + h) - mf.eval(s - h)) / (2.0 * h);
            let d = mf.deriv(s);
            (fd - d).abs() / (1.0 + d.abs())
        })
        .fold(0.0, f64::max)
}

/// `n` points log-spaced on `[a, b]`, merged with `n` linearly spaced ones.
fn sample_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    let mut s: Vec<f64> = (0..n)
        .flat_map(|j| {
            let t = j as f64 / (n - 1) as f64;
            [(la + (lb - la) * t).exp().clamp(a, b), a + (b - a) * t]
        })
        .collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Log-spaced points, a helper for derivative checks.
pub fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|j| (la + (lb - la) * j as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            go(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + go(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    // split into a few panels first so oscillatory integrands are resolved
    let panels = (((b - a).abs() / 0.5).ceil() as usize).clamp(1, 4096);
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + width * p as f64;
            let hi = if p + 1 == panels { b } else { lo + width };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            go(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), panel_tol, 40)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn builtins() -> Vec<MotilityFunction> {
        vec![
            MotilityFunction::Constant { c: 1.5 },
            MotilityFunction::linear(),
            MotilityFunction::Log1p,
            MotilityFunction::sine(),
            MotilityFunction::exponential(),
        ]
    }

    #[test]
    fn gamma_eval_examples() {
        let g = MotilityFunction::exponential().gamma_eval(LN_2).unwrap();
        assert!((g.value - 0.5).abs() < 1e-15 && (g.deriv + 0.5).abs() < 1e-15);
        let g = MotilityFunction::linear().gamma_eval(3.0).unwrap();
        assert_eq!((g.value, g.deriv), (3.0, 1.0));
        let g = MotilityFunction::sine().gamma_eval(FRAC_PI_2).unwrap();
        assert_eq!(g.value, 3.0);
        assert!(g.deriv.abs() < 1e-15);
    }

    #[test]
    fn gamma_eval_rejects_nonpositive() {
        for mf in builtins() {
            assert!(matches!(mf.gamma_eval(0.0), Err(Error::Domain(_))));
            assert!(matches!(mf.gamma_eval(-1.0), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn big_gamma_examples() {
        assert_eq!(MotilityFunction::linear().big_gamma(3.0, 1.0).unwrap(), 4.0);
        for mf in builtins() {
            assert_eq!(mf.big_gamma(0.7, 0.7).unwrap(), 0.0);
        }
        let expected = 8.0 + 1f64.cos() - 5f64.cos();
        let got = MotilityFunction::sine().big_gamma(5.0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!(MotilityFunction::linear().big_gamma(0.5, 1.0).is_err());
    }

    #[test]
    fn classify_examples() {
        let c = MotilityFunction::sine().classify(2.0, 0.1, 1000.0).unwrap();
        assert_eq!(c.gamma_inf_estimate, 1.0);
        assert!(c.nondegenerate_for_tau && !c.monotone_nondecreasing);
        assert!(c.warnings.is_empty(), "{:?}", c.warnings);

        let c = MotilityFunction::linear().classify(1.0, 0.1, 1000.0).unwrap();
        assert_eq!(c.gamma_inf_estimate, f64::INFINITY);
        assert!(c.nondegenerate_for_tau && c.monotone_nondecreasing);
        assert!((c.gamma_star_estimate - 0.1).abs() < 1e-15);

        let c = MotilityFunction::exponential().classify(1.0, 0.1, 1000.0).unwrap();
        assert_eq!(c.gamma_inf_estimate, 0.0);
        assert!(!c.nondegenerate_for_tau && !c.monotone_nondecreasing);
        assert!(MotilityFunction::linear().classify(1.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn classify_reports_discrepancy() {
        // declared bounded by its last slope, but the table is only for a short range
        let t = CubicTable::new(vec![1.0, 2.0, 3.0], vec![1.0, 0.5, 0.5], Some(vec![0.0, 0.0, 0.0])).unwrap();
        let mf = MotilityFunction::Table(t);
        assert!(!mf.declared_monotone());
        let c = mf.classify(1.0, 1.0, 10.0).unwrap();
        assert!(c.warnings.is_empty());
        assert_eq!(c.gamma_inf_estimate, 0.5);
        assert!(!c.nondegenerate_for_tau);
    }

    #[test]
    fn derivative_consistency() {
        let pts = log_spaced(1e-2, 50.0, 100);
        for mf in builtins() {
            assert!(derivative_check(&mf, &pts) <= 1e-6, "{}", mf.id());
        }
        let t = table();
        assert!(derivative_check(&t, &log_spaced(0.2, 5.9, 100)) <= 1e-6);
    }

    #[test]
    fn positivity_and_monotone_declarations() {
        let pts = log_spaced(1e-3, 100.0, 500);
        for mf in builtins() {
            assert!(pts.iter().all(|&s| mf.eval(s) > 0.0), "{}", mf.id());
            if mf.declared_monotone() {
                assert!(pts.iter().all(|&s| mf.deriv(s) >= -1e-12), "{}", mf.id());
            }
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for floor in [0.05, 1.0] {
            for mf in builtins() {
                for b in [floor * 1.5, 3.0, 17.3, 50.0] {
                    let exact = mf.integral(floor, b);
                    let quad = mf.integral_quadrature(floor, b);
                    assert!(
                        (exact - quad).abs() <= 1e-10 * exact.abs().max(1e-300),
                        "{} on [{floor}, {b}]: {exact} vs {quad}",
                        mf.id()
                    );
                }
            }
        }
    }

    #[test]
    fn monotone_primitive_bounds() {
        for mf in builtins().into_iter().filter(|m| m.declared_monotone()) {
            for &s in &log_spaced(0.1, 50.0, 60) {
                let g = mf.big_gamma(s, 0.1).unwrap();
                assert!(g >= 0.0 && g <= s * mf.eval(s) * (1.0 + 1e-14), "{}", mf.id());
            }
        }
    }

    #[test]
    fn primitive_dominates_identity() {
        let lin = MotilityFunction::linear();
        for eps in [1.0, 0.1, 0.01] {
            let s_eps = lin.dominance_threshold(eps, 0.1, 1e12);
            assert!(s_eps <= 1e6, "eps {eps}: {s_eps}");
            // s − ε(s² − f²)/2 peaks at s = 1/ε
            let f = 0.1f64;
            let peak = 1.0 / eps - eps * (1.0 / (eps * eps) - f * f) / 2.0;
            assert!((s_eps - peak).abs() <= 1e-3 * peak.abs().max(1.0));
        }
        let log = MotilityFunction::Log1p;
        for eps in [1.0, 0.1] {
            assert!(log.dominance_threshold(eps, 0.1, 1e12) <= 1e6);
        }
        // for log(1+s) the threshold grows like ε·e^{1/ε}: finite but beyond 1e6 at ε = 0.01
        let s = log.dominance_threshold(0.01, 0.1, 1e50);
        assert!(s.is_finite() && s > 1e6);
        assert!((s.ln() - (100f64 + 0.01f64.ln())).abs() < 0.5, "{s}");
    }

    fn table() -> MotilityFunction {
        let knots: Vec<f64> = (0..12).map(|i| 0.5 + 0.5 * i as f64).collect();
        let values: Vec<f64> = knots.iter().map(|s| 1.0 + s * s).collect();
        let slopes: Vec<f64> = knots.iter().map(|s| 2.0 * s).collect();
        MotilityFunction::Table(CubicTable::new(knots, values, Some(slopes)).unwrap())
    }

    #[test]
    fn table_reproduces_quadratic() {
        let t = table();
        for s in [0.5, 0.8, 2.25, 5.9] {
            assert!((t.eval(s) - (1.0 + s * s)).abs() < 1e-13);
            assert!((t.deriv(s) - 2.0 * s).abs() < 1e-12);
        }
        // linear C¹ extension outside the knots
        assert!((t.eval(7.0) - (1.0 + 36.0 + 12.0)).abs() < 1e-12);
        let exact = (5.0 - 1.0) + (125.0 - 1.0) / 3.0;
        assert!((t.integral(1.0, 5.0) - exact).abs() < 1e-10);
        assert!(t.declared_monotone());
        assert_eq!(t.declared_gamma_inf(), f64::INFINITY);
    }

    #[test]
    fn table_rejects_bad_data() {
        assert!(CubicTable::new(vec![1.0], vec![1.0], None).is_err());
        assert!(CubicTable::new(vec![1.0, 1.0], vec![1.0, 2.0], None).is_err());
        assert!(CubicTable::new(vec![1.0, 2.0], vec![1.0, -2.0], None).is_err());
        // falling right end would cross zero
        assert!(CubicTable::new(vec![1.0, 2.0], vec![2.0, 1.0], None).is_err());
        // left extension through zero before s = 0
        assert!(CubicTable::new(vec![1.0, 2.0], vec![0.5, 2.0], None).is_err());
        // overshooting derivatives make the cubic dip negative
        assert!(CubicTable::new(vec![1.0, 2.0], vec![0.1, 0.1], Some(vec![-5.0, 5.0])).is_err());
    }

    #[test]
    fn monotone_slopes_preserve_monotone_data() {
        let t = CubicTable::new(vec![0.5, 1.0, 1.1, 4.0], vec![1.0, 1.0, 3.0, 3.5], None).unwrap();
        let mf = MotilityFunction::Table(t);
        assert!(mf.declared_monotone());
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(MotilityFunction::Sine { base: 1.0, amp: 1.0 }.validate().is_err());
        assert!(MotilityFunction::Constant { c: 0.0 }.validate().is_err());
        assert!(MotilityFunction::Exponential { rate: -1.0 }.validate().is_err());
        for mf in builtins() {
            mf.validate().unwrap();
        }
    }

    proptest::proptest! {
        #[test]
        fn big_gamma_nondecreasing(floor in 0.01f64..2.0, a in 0.0f64..20.0, d in 0.0f64..20.0) {
            for mf in builtins() {
                let g1 = mf.big_gamma(floor + a, floor).unwrap();
                let g2 = mf.big_gamma(floor + a + d, floor).unwrap();
                proptest::prop_assert!(g2 >= g1 - 1e-12 * g1.abs().max(1.0));
            }
        }

        #[test]
        fn integral_is_additive(a in 0.01f64..10.0, b in 0.01f64..10.0, c in 0.01f64..10.0) {
            for mf in builtins() {
                let lhs = mf.integral(a, c);
                let rhs = mf.integral(a, b) + mf.integral(b, c);
                let scale = mf.integral(a.min(b).min(c), a.max(b).max(c)).abs().max(1e-12);
                proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }
}
