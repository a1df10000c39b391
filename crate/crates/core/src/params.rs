//! Domain types shared by every stage of the pipeline.
//!
//! Time is measured in years throughout. The interest (attention) history on
//! `[-L, 0]` is deterministic and piecewise linear between its knots.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Relative slack used when checking that a time lies inside the history window.
const TIME_EPS: f64 = 1e-12;

/// Real-world model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean-reversion speed of the interest process (1/years).
    pub a: f64,
    /// Long-run mean of the interest process (proxy units).
    pub b: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    /// Drift of the log price (1/years).
    pub mu: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    /// Delay with which interest feeds into volatility (years).
    pub tau: f64,
    /// Risk-free rate (1/years).
    #[serde(default)]
    pub r: f64,
}

impl ModelParams {
    /// `2ab / sigma_I^2`; the interest process stays positive when this is at least one.
    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.a * self.b / (self.sigma_i * self.sigma_i)
    }

    /// Parameters of the estimation experiment used throughout the tests.
    pub fn reference() -> Self {
        ModelParams {
            a: 30.0,
            b: 15.0,
            sigma_i: 0.6,
            mu: 0.0,
            sigma_p: 0.2,
            tau: 0.025,
            r: 0.0,
        }
    }
}

/// Parameters of a CIR process `dI = a(b - I)dt + σ√I dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
}

impl CirParams {
    pub fn new(a: f64, b: f64, sigma_i: f64) -> Self {
        CirParams { a, b, sigma_i }
    }

    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.a * self.b / (self.sigma_i * self.sigma_i)
    }

    /// Conditional mean of `I_{t+dt}` given `I_t = y`.
    pub fn conditional_mean(&self, y: f64, dt: f64) -> f64 {
        self.b + (y - self.b) * (-self.a * dt).exp()
    }

    /// Conditional variance of `I_{t+dt}` given `I_t = y`.
    pub fn conditional_variance(&self, y: f64, dt: f64) -> f64 {
        let e = (-self.a * dt).exp();
        let s2 = self.sigma_i * self.sigma_i;
        y * (s2 / self.a) * (e - e * e) + self.b * (s2 / (2.0 * self.a)) * (1.0 - e).powi(2)
    }
}

impl From<&ModelParams> for CirParams {
    fn from(p: &ModelParams) -> Self {
        CirParams::new(p.a, p.b, p.sigma_i)
    }
}

/// A single violated parameter constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositive { name: &'static str, value: f64 },
    Negative { name: &'static str, value: f64 },
    NonFinite { name: &'static str },
    Feller { ratio: f64 },
    TauExceedsHistory { tau: f64, length: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive { name, value } => write!(f, "{name} must be > 0 (got {value})"),
            Violation::Negative { name, value } => write!(f, "{name} must be >= 0 (got {value})"),
            Violation::NonFinite { name } => write!(f, "{name} is not finite"),
            Violation::Feller { ratio } => write!(f, "Feller: 2ab/σ_I²={ratio} < 1"),
            Violation::TauExceedsHistory { tau, length } => {
                write!(f, "tau exceeds history length ({tau} > {length})")
            }
        }
    }
}

/// Checks every parameter and history invariant, returning all violations found.
pub fn validate_params(p: &ModelParams, h: &InterestHistory) -> Vec<Violation> {
    let mut out = Vec::new();
    let fields = [
        ("a", p.a),
        ("b", p.b),
        ("sigma_I", p.sigma_i),
        ("mu", p.mu),
        ("sigma_P", p.sigma_p),
        ("tau", p.tau),
        ("r", p.r),
    ];
    for (name, value) in fields {
        if !value.is_finite() {
            out.push(Violation::NonFinite { name });
        }
    }
    for (name, value) in [("a", p.a), ("sigma_I", p.sigma_i), ("sigma_P", p.sigma_p)] {
        if value.is_finite() && value <= 0.0 {
            out.push(Violation::NonPositive { name, value });
        }
    }
    for (name, value) in [("tau", p.tau), ("r", p.r)] {
        if value < 0.0 {
            out.push(Violation::Negative { name, value });
        }
    }
    let ratio = p.feller_ratio();
    if !(ratio >= 1.0) {
        out.push(Violation::Feller { ratio });
    }
    if p.tau > h.length() * (1.0 + TIME_EPS) {
        out.push(Violation::TauExceedsHistory {
            tau: p.tau,
            length: h.length(),
        });
    }
    out
}

/// Deterministic interest history on `[-L, 0]`, linearly interpolated between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct InterestHistory {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl InterestHistory {
    /// Builds a history from `(time, value)` knots sorted by time, ending at time 0.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return domain("interest history needs at least one knot");
        }
        let (times, values): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return domain(format!(
                "interest history values must be positive (got {v})"
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return domain("interest history times must be finite");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("interest history times must be strictly increasing");
        }
        if *times.last().unwrap() != 0.0 {
            return domain("interest history must end at time 0");
        }
        Ok(InterestHistory { times, values })
    }

    /// Constant history of the given length (a single segment).
    pub fn constant(value: f64, length: f64) -> Result<Self> {
        if length == 0.0 {
            return Self::new(vec![(0.0, value)]);
        }
        if !(length > 0.0) {
            return domain(format!("history length must be >= 0 (got {length})"));
        }
        Self::new(vec![(-length, value), (0.0, value)])
    }

    /// History from equally spaced observations `y_{-M}, ..., y_0` with step `delta`.
    pub fn from_grid(values: &[f64], delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return domain(format!("grid step must be positive (got {delta})"));
        }
        let m = values.len().saturating_sub(1);
        let knots = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (-((m - i) as f64) * delta, v))
            .collect();
        Self::new(knots)
    }

    /// Window length `L`.
    pub fn length(&self) -> f64 {
        -self.times[0]
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at time 0, the starting point of the interest process.
    pub fn current(&self) -> f64 {
        *self.values.last().unwrap()
    }

    fn clamp_time(&self, t: f64) -> Result<f64> {
        let lo = self.times[0];
        let slack = TIME_EPS * self.length().max(1.0);
        if !(t >= lo - slack && t <= slack) {
            return domain(format!("time {t} outside history window [{lo}, 0]"));
        }
        Ok(t.clamp(lo, 0.0))
    }

    /// Index `i` of the segment `[times[i], times[i+1]]` containing `t`.
    fn segment(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&x| x <= t);
        idx.saturating_sub(1)
            .min(self.times.len().saturating_sub(2))
    }

    /// Piecewise-linear interpolant at `t` in `[-L, 0]`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = self.clamp_time(t)?;
        if self.times.len() == 1 {
            return Ok(self.values[0]);
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        if t == t0 {
            return Ok(v0);
        }
        if t == t1 {
            return Ok(v1);
        }
        Ok(v0 + (t - t0) * (v1 - v0) / (t1 - t0))
    }

    /// Exact integral of the interpolant over `[lo, hi]` in raw history time.
    pub fn integral(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return domain(format!("integration bounds out of order ({lo} > {hi})"));
        }
        let lo = self.clamp_time(lo)?;
        let hi = self.clamp_time(hi)?;
        if lo == hi || self.times.len() == 1 {
            return Ok(self.values[0] * (hi - lo));
        }
        let mut total = 0.0;
        let first = self.segment(lo);
        let last = self.segment(hi);
        for i in first..=last {
            let a = lo.max(self.times[i]);
            let b = hi.min(self.times[i + 1]);
            if b > a {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let (v0, v1) = (self.values[i], self.values[i + 1]);
                let slope = (v1 - v0) / (t1 - t0);
                let fa = v0 + (a - t0) * slope;
                let fb = v0 + (b - t0) * slope;
                total += 0.5 * (fa + fb) * (b - a);
            }
        }
        Ok(total)
    }

    /// `∫_s^t φ_I(u - τ) du`, the delayed integral used by the lognormal branches.
    pub fn integrate_delayed(&self, s: f64, t: f64, tau: f64) -> Result<f64> {
        if !(s <= t) {
            return domain(format!("integration bounds out of order ({s} > {t})"));
        }
        self.integral(s - tau, t - tau)
    }

    /// Largest absolute slope between consecutive knots.
    pub fn max_slope(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<(f64, f64)>> for InterestHistory {
    type Error = Error;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self> {
        InterestHistory::new(knots)
    }
}

impl From<InterestHistory> for Vec<(f64, f64)> {
    fn from(h: InterestHistory) -> Self {
        h.times.into_iter().zip(h.values).collect()
    }
}

/// Risk-neutral interest parameters `(ã, b̃)` and the change-of-measure parameters behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RNParams {
    pub a_tilde: f64,
    pub b_tilde: f64,
    pub lambda_a: f64,
    pub lambda_ab: f64,
}

impl RNParams {
    /// The measure under which the interest dynamics are unchanged.
    pub fn uncalibrated(p: &ModelParams) -> Self {
        RNParams {
            a_tilde: p.a,
            b_tilde: p.b,
            lambda_a: 0.0,
            lambda_ab: 0.0,
        }
    }

    /// Builds from `(ã, b̃)` directly, recovering `λ_a = ã - a` and `λ_ab = ab - ãb̃`.
    pub fn from_tilde(p: &ModelParams, a_tilde: f64, b_tilde: f64) -> Result<Self> {
        if !(a_tilde > 0.0) {
            return domain(format!("ã must be > 0 (got {a_tilde})"));
        }
        if !(2.0 * a_tilde * b_tilde >= p.sigma_i * p.sigma_i) {
            return domain(format!(
                "2ãb̃ = {} < σ_I² = {}",
                2.0 * a_tilde * b_tilde,
                p.sigma_i * p.sigma_i
            ));
        }
        Ok(RNParams {
            a_tilde,
            b_tilde,
            lambda_a: a_tilde - p.a,
            lambda_ab: p.a * p.b - a_tilde * b_tilde,
        })
    }
}

/// Aligned observations of log price and attention proxy on a uniform grid.
///
/// `proxy` holds `y_{-M}, ..., y_N`; `log_prices` holds `x_0, ..., x_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPair {
    pub delta: f64,
    pub log_prices: Vec<f64>,
    pub proxy: Vec<f64>,
    #[serde(default)]
    pub start_date: Option<String>,
}

impl SeriesPair {
    pub fn new(delta: f64, log_prices: Vec<f64>, proxy: Vec<f64>) -> Result<Self> {
        let s = SeriesPair {
            delta,
            log_prices,
            proxy,
            start_date: None,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return domain(format!("grid step must be positive (got {})", self.delta));
        }
        if self.log_prices.is_empty() {
            return domain("series needs at least one log price");
        }
        if self.proxy.len() < self.log_prices.len() {
            return domain("proxy must have at least as many observations as log prices");
        }
        if let Some((i, v)) = self
            .proxy
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return domain(format!("proxy value {v} at index {i} is not positive"));
        }
        if self.log_prices.iter().any(|x| !x.is_finite()) {
            return domain("log prices must be finite");
        }
        Ok(())
    }

    /// Number of returns `N`.
    pub fn n(&self) -> usize {
        self.log_prices.len() - 1
    }

    /// Number of leading history observations `M`.
    pub fn max_lag(&self) -> usize {
        self.proxy.len() - self.log_prices.len()
    }

    /// Proxy observation `y_j` for `j` in `-M..=N`.
    pub fn y(&self, j: isize) -> f64 {
        self.proxy[(j + self.max_lag() as isize) as usize]
    }

    /// The observed interest path `y_0, ..., y_N`.
    pub fn interest_path(&self) -> &[f64] {
        &self.proxy[self.max_lag()..]
    }

    pub fn returns(&self) -> Vec<f64> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// History `y_{-M}, ..., y_0` as an interpolated function on `[-MΔ, 0]`.
    pub fn history(&self) -> Result<InterestHistory> {
        InterestHistory::from_grid(&self.proxy[..=self.max_lag()], self.delta)
    }
}

/// A single option quote with premiums already in currency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub strike: f64,
    /// Years from valuation.
    pub expiry: f64,
    pub bid: f64,
    pub ask: f64,
    /// Index level at quote time.
    pub underlying: f64,
    pub is_call: bool,
}

impl OptionQuote {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_history() -> InterestHistory {
        InterestHistory::constant(14.0, 0.05).unwrap()
    }

    #[test]
    fn reference_setting_is_valid() {
        let v = validate_params(&ModelParams::reference(), &reference_history());
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn feller_violation_reports_ratio() {
        let p = ModelParams {
            a: 1.0,
            b: 0.1,
            sigma_i: 1.0,
            ..ModelParams::reference()
        };
        let v = validate_params(&p, &reference_history());
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Feller { ratio } if (ratio - 0.2).abs() < 1e-15));
        assert_eq!(v[0].to_string(), "Feller: 2ab/σ_I²=0.2 < 1");
    }

    #[test]
    fn tau_beyond_history() {
        let p = ModelParams {
            tau: 0.1,
            ..ModelParams::reference()
        };
        let v = validate_params(&p, &reference_history());
        assert!(matches!(
            v.as_slice(),
            [Violation::TauExceedsHistory { .. }]
        ));
        assert!(v[0].to_string().starts_with("tau exceeds history length"));
    }

    #[test]
    fn every_violation_is_listed() {
        let p = ModelParams {
            a: -1.0,
            sigma_p: 0.0,
            r: -0.1,
            tau: 1.0,
            ..ModelParams::reference()
        };
        let v = validate_params(&p, &reference_history());
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn constant_history_evaluates_constant() {
        let h = reference_history();
        assert_eq!(h.eval(-0.02).unwrap(), 14.0);
    }

    #[test]
    fn interpolation_midpoint_and_knots() {
        let d = 1.0 / 360.0;
        let h = InterestHistory::new(vec![(-2.0 * d, 10.0), (-d, 12.0), (0.0, 16.0)]).unwrap();
        assert_relative_eq!(h.eval(-1.5 * d).unwrap(), 11.0, max_relative = 1e-14);
        assert_eq!(h.eval(-2.0 * d).unwrap(), 10.0);
        assert_eq!(h.eval(-d).unwrap(), 12.0);
        assert_eq!(h.eval(0.0).unwrap(), 16.0);
    }

    #[test]
    fn eval_outside_window_is_domain_error() {
        let h = reference_history();
        assert!(matches!(h.eval(0.01), Err(Error::Domain(_))));
        assert!(matches!(h.eval(-0.06), Err(Error::Domain(_))));
    }

    #[test]
    fn delayed_integral_of_constant() {
        let h = reference_history();
        assert_relative_eq!(
            h.integrate_delayed(0.0, 0.02, 0.025).unwrap(),
            0.28,
            max_relative = 1e-14
        );
        assert_eq!(h.integrate_delayed(0.01, 0.01, 0.025).unwrap(), 0.0);
    }

    #[test]
    fn delayed_integral_leaving_window_fails() {
        let h = reference_history();
        assert!(h.integrate_delayed(0.0, 0.04, 0.025).is_err());
    }

    #[test]
    fn two_segment_integral_matches_riemann_sum() {
        let h = InterestHistory::new(vec![(-1.0, 3.0), (-0.4, 7.0), (0.0, 2.0)]).unwrap();
        let (lo, hi) = (-0.9, -0.1);
        // midpoint Riemann sum oracle
        let n = 200_000;
        let w = (hi - lo) / n as f64;
        let riemann: f64 = (0..n)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * w;
                let v = if t < -0.4 {
                    3.0 + (t + 1.0) * (4.0 / 0.6)
                } else {
                    7.0 + (t + 0.4) * (-5.0 / 0.4)
                };
                v * w
            })
            .sum();
        assert!((h.integral(lo, hi).unwrap() - riemann).abs() < 1e-10);
    }

    #[test]
    fn history_serializes_as_knot_list() {
        let h = InterestHistory::new(vec![(-1.0, 3.0), (0.0, 2.0)]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, "[[-1.0,3.0],[0.0,2.0]]");
        let back: InterestHistory = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<InterestHistory>("[[-1.0,-3.0],[0.0,2.0]]").is_err());
    }

    #[test]
    fn rn_from_tilde_recovers_lambdas() {
        let p = ModelParams::reference();
        let rn = RNParams::from_tilde(&p, 20.0, 10.0).unwrap();
        assert_relative_eq!(rn.lambda_a, -10.0);
        assert_relative_eq!(rn.lambda_ab, 450.0 - 200.0);
        assert!(RNParams::from_tilde(&p, 20.0, 0.001).is_err());
    }

    #[test]
    fn series_indexing() {
        let s = SeriesPair::new(1.0, vec![0.0, 0.1, 0.3], vec![5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        assert_eq!(s.max_lag(), 2);
        assert_eq!(s.n(), 2);
        assert_eq!(s.y(-2), 5.0);
        assert_eq!(s.y(0), 7.0);
        assert_eq!(s.interest_path(), &[7.0, 8.0, 9.0]);
        assert!(SeriesPair::new(1.0, vec![0.0, 0.1], vec![1.0, 0.0]).is_err());
    }
}
