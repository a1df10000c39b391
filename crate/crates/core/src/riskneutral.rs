//! Change to the risk-neutral measure and conditional characteristic
//! functions of the log price under the delayed and the general filtration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::{InterestHistory, ModelParams, RNParams};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest damping the Fourier pricer may request; `Im λ` must lie in `(-(ALPHA_MAX+1), 1]`.
pub const ALPHA_MAX: f64 = 3.0;

/// `ã = a + λ_a`, `b̃ = (ab - λ_ab)/(a + λ_a)`.
///
/// Requires `λ_a > -a` and `λ_ab ≤ ab - σ_I²/2`.
pub fn to_risk_neutral(p: &ModelParams, lambda_a: f64, lambda_ab: f64) -> Result<RNParams> {
    if !lambda_a.is_finite() || !lambda_ab.is_finite() {
        return domain("change-of-measure parameters must be finite");
    }
    if !(lambda_a > -p.a) {
        return domain(format!("lambda_a > -a violated: {lambda_a} <= {}", -p.a));
    }
    let bound = p.a * p.b - 0.5 * p.sigma_i * p.sigma_i;
    if !(lambda_ab <= bound) {
        return domain(format!(
            "lambda_ab <= ab - sigma_I^2/2 violated: {lambda_ab} > {bound}"
        ));
    }
    let a_tilde = p.a + lambda_a;
    Ok(RNParams {
        a_tilde,
        b_tilde: (p.a * p.b - lambda_ab) / a_tilde,
        lambda_a,
        lambda_ab,
    })
}

/// Coefficients `A(u)`, `B(u)` of the affine exponent.
///
/// The logarithm is taken as `ln(1 - g e^{-du}) - ln(1 - g)`. With the
/// principal root `Re d > 0`, so `|g| < 1` and both arguments stay in the
/// right half-plane: the difference is the continuous branch of the log of
/// the ratio for every horizon.
pub fn charfn_ab(
    lambda: Complex64,
    rn: &RNParams,
    sigma_p: f64,
    sigma_i: f64,
    u: f64,
) -> Result<(Complex64, Complex64)> {
    if !(u >= 0.0) {
        return domain(format!("horizon u must be >= 0 (got {u})"));
    }
    let (a, b) = ab_unchecked(lambda, rn, sigma_p, sigma_i, u);
    if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite()) {
        return Err(Error::Numerical(format!(
            "A/B not finite at lambda = {lambda}, u = {u}"
        )));
    }
    Ok((a, b))
}

/// Time at which `E[exp(c ∫_0^h I du)]` blows up for the CIR process with
/// `(ã, σ_I)`, `c = ½σ_P² u(u-1)` the exponent of `E[S^u]`. Infinite when
/// the Riccati equation has a bounded solution.
pub fn explosion_time(u: f64, rn: &RNParams, sigma_p: f64, sigma_i: f64) -> f64 {
    let c = 0.5 * sigma_p * sigma_p * u * (u - 1.0);
    let gamma2 = 2.0 * sigma_i * sigma_i * c - rn.a_tilde * rn.a_tilde;
    if !(gamma2 > 0.0) {
        return f64::INFINITY;
    }
    let gamma = gamma2.sqrt();
    2.0 / gamma * (0.5 * std::f64::consts::PI + (rn.a_tilde / gamma).atan())
}

/// Largest `u > 1` with `E[S^u]` finite over a stochastic horizon `h`.
pub fn critical_moment(rn: &RNParams, sigma_p: f64, sigma_i: f64, h: f64) -> f64 {
    if !(h > 0.0) {
        return f64::INFINITY;
    }
    let explodes = |u: f64| explosion_time(u, rn, sigma_p, sigma_i) <= h;
    let mut hi = 2.0;
    while !explodes(hi) {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 1.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if explodes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn ab_unchecked(
    lambda: Complex64,
    rn: &RNParams,
    sigma_p: f64,
    sigma_i: f64,
    u: f64,
) -> (Complex64, Complex64) {
    if u == 0.0 {
        return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let at = rn.a_tilde;
    let s2 = sigma_i * sigma_i;
    let d = (at * at + sigma_p * sigma_p * s2 * (I * lambda + lambda * lambda)).sqrt();
    let g = (at - d) / (at + d);
    let e = (-d * u).exp();
    let one = Complex64::new(1.0, 0.0);
    let log_ratio = (one - g * e).ln() - (one - g).ln();
    let a = at * rn.b_tilde / s2 * ((at - d) * u - 2.0 * log_ratio);
    let b = (at - d) / s2 * (one - e) / (one - g * e);
    (a, b)
}

/// State at the conditioning time `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharFnState {
    pub s: f64,
    pub x_s: f64,
    /// `I_{s-τ}` for the delayed filtration, `I_s` for the general one.
    /// When absent it is read from the history where possible.
    pub i_lag: Option<f64>,
}

/// Everything the characteristic functions need besides `λ` and `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharFnContext {
    pub rn: RNParams,
    pub sigma_p: f64,
    pub sigma_i: f64,
    pub r: f64,
    pub tau: f64,
    pub history: InterestHistory,
    pub state: CharFnState,
}

impl CharFnContext {
    /// Context at time 0 with log price `x0`; interest values come from the history.
    pub fn at_origin(p: &ModelParams, rn: RNParams, history: InterestHistory, x0: f64) -> Self {
        CharFnContext {
            rn,
            sigma_p: p.sigma_p,
            sigma_i: p.sigma_i,
            r: p.r,
            tau: p.tau,
            history,
            state: CharFnState {
                s: 0.0,
                x_s: x0,
                i_lag: None,
            },
        }
    }

    pub fn with_state(mut self, s: f64, x_s: f64, i_lag: Option<f64>) -> Self {
        self.state = CharFnState { s, x_s, i_lag };
        self
    }

    fn check_lambda(&self, lambda: Complex64) -> Result<()> {
        if !(lambda.im > -(ALPHA_MAX + 1.0) && lambda.im <= 1.0) || !lambda.re.is_finite() {
            return domain(format!(
                "lambda = {lambda} outside the supported strip -{} < Im <= 1",
                ALPHA_MAX + 1.0
            ));
        }
        Ok(())
    }

    /// `iλ(x + r·h) - ½σ_P²(iλ + λ²)·J`: the exponent of the conditionally normal branches.
    fn lognormal_exponent(&self, lambda: Complex64, x: f64, h: f64, integral: f64) -> Complex64 {
        I * lambda * (x + self.r * h)
            - 0.5 * self.sigma_p * self.sigma_p * (I * lambda + lambda * lambda) * integral
    }

    /// `iλ r h + A(h) + v B(h)`.
    fn affine_exponent(&self, lambda: Complex64, h: f64, v: f64) -> Result<Complex64> {
        let (a, b) = charfn_ab(lambda, &self.rn, self.sigma_p, self.sigma_i, h)?;
        Ok(I * lambda * self.r * h + a + v * b)
    }

    /// Largest `u` with `E[S_t^u | F_s]` finite under the delayed filtration.
    pub fn critical_moment(&self, t: f64) -> f64 {
        let h = t - self.state.s.max(self.tau);
        critical_moment(&self.rn, self.sigma_p, self.sigma_i, h)
    }

    /// Log of the characteristic function with respect to the delayed filtration.
    pub fn log_charfn_delayed(&self, lambda: Complex64, t: f64) -> Result<Complex64> {
        self.check_lambda(lambda)?;
        let CharFnState { s, x_s, i_lag } = self.state;
        if !(s <= t) {
            return domain(format!("need s <= t (s = {s}, t = {t})"));
        }
        if s < 0.0 {
            return domain(format!("conditioning time must be >= 0 (got {s})"));
        }
        let tau = self.tau;
        if s == t {
            return Ok(I * lambda * x_s);
        }
        if t <= tau {
            let j = self.history.integrate_delayed(s, t, tau)?;
            return Ok(self.lognormal_exponent(lambda, x_s, t - s, j));
        }
        if s >= tau {
            let v = match i_lag {
                Some(v) => v,
                None if s == tau => self.history.current(),
                None => {
                    return domain(format!(
                        "I_(s-tau) must be supplied for s = {s} > tau = {tau}"
                    ))
                }
            };
            if !(v > 0.0) {
                return domain(format!("interest value must be positive (got {v})"));
            }
            return Ok(I * lambda * x_s + self.affine_exponent(lambda, t - s, v)?);
        }
        // s < tau < t: condition on time tau first
        let head = self.affine_exponent(lambda, t - tau, self.history.current())?;
        let j = self.history.integrate_delayed(s, tau, tau)?;
        Ok(head + self.lognormal_exponent(lambda, x_s, tau - s, j))
    }

    /// Characteristic function with respect to the delayed filtration.
    pub fn charfn_delayed(&self, lambda: Complex64, t: f64) -> Result<Complex64> {
        finite_exp(self.log_charfn_delayed(lambda, t)?, lambda)
    }

    /// Log of the characteristic function with respect to the general filtration.
    ///
    /// `path_integral` is the realized `∫ I_{u-τ} du` over `[s, t]` when
    /// `t - τ ≤ s`, or over `[s, s + τ]` when `s < t - τ`. It may be omitted
    /// when that window lies inside the history.
    pub fn log_charfn_general(
        &self,
        lambda: Complex64,
        t: f64,
        path_integral: Option<f64>,
    ) -> Result<Complex64> {
        self.check_lambda(lambda)?;
        let CharFnState { s, x_s, i_lag } = self.state;
        if !(s <= t) {
            return domain(format!("need s <= t (s = {s}, t = {t})"));
        }
        if s < 0.0 {
            return domain(format!("conditioning time must be >= 0 (got {s})"));
        }
        let tau = self.tau;
        if s == t {
            return Ok(I * lambda * x_s);
        }
        let known = |lo: f64, hi: f64| -> Result<f64> {
            match path_integral {
                Some(j) if j >= 0.0 => Ok(j),
                Some(j) => domain(format!("path integral must be >= 0 (got {j})")),
                None if hi <= tau => self.history.integrate_delayed(lo, hi, tau),
                None => domain(format!(
                    "realized integral over [{lo}, {hi}] must be supplied (beyond the history)"
                )),
            }
        };
        if t - tau <= s {
            let j = known(s, t)?;
            return Ok(self.lognormal_exponent(lambda, x_s, t - s, j));
        }
        let v = match i_lag {
            Some(v) => v,
            None if s == 0.0 => self.history.current(),
            None => return domain(format!("I_s must be supplied for s = {s} > 0")),
        };
        if !(v > 0.0) {
            return domain(format!("interest value must be positive (got {v})"));
        }
        let head = self.affine_exponent(lambda, t - s - tau, v)?;
        let j = known(s, s + tau)?;
        Ok(head + self.lognormal_exponent(lambda, x_s, tau, j))
    }

    /// Characteristic function with respect to the general filtration.
    pub fn charfn_general(
        &self,
        lambda: Complex64,
        t: f64,
        path_integral: Option<f64>,
    ) -> Result<Complex64> {
        finite_exp(self.log_charfn_general(lambda, t, path_integral)?, lambda)
    }
}

fn finite_exp(z: Complex64, lambda: Complex64) -> Result<Complex64> {
    let v = z.exp();
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!(
            "characteristic function overflows at lambda = {lambda}"
        )))
    }
}
