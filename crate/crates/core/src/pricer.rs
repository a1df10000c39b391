//! European option values: damped Fourier inversion of the characteristic
//! function, the lognormal closed form for maturities inside the delay,
//! put-call parity, a Monte Carlo oracle and the Black-Scholes baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::{validate_params, CirParams, InterestHistory, ModelParams, RNParams};
use crate::riskneutral::{CharFnContext, ALPHA_MAX};
use crate::sim::cir_step;
use crate::special::norm_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fourier,
    Lognormal,
    Mc,
    BlackScholes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceResult {
    pub value: f64,
    pub method: Method,
    /// Absolute error proxy: MC standard error or grid-refinement difference.
    pub err_estimate: f64,
    /// Set by [`price_put`] when parity gave a negative value beyond `err_estimate`.
    #[serde(default)]
    pub floored: bool,
}

impl PriceResult {
    fn new(value: f64, method: Method, err_estimate: f64) -> Self {
        PriceResult {
            value,
            method,
            err_estimate,
            floored: false,
        }
    }
}

/// Weights of the discretized inversion integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Half weight at `v = 0`, unit weight elsewhere. The integrand extends
    /// to an analytic function on the real line, so this converges
    /// geometrically in `1/eta`.
    #[default]
    Trapezoid,
    /// The classic Carr-Madan weights `(3 + (-1)^j - δ_j0)/3`.
    Simpson,
}

/// Carr-Madan tuning. Log-strike spacing is `2π / (n_points · eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierGrid {
    /// Damping. Lowered per maturity to half the distance to the critical
    /// moment when `E[S^(alpha+1)]` would be infinite.
    pub alpha: f64,
    pub n_points: usize,
    pub eta: f64,
    #[serde(default)]
    pub rule: Quadrature,
}

impl Default for FourierGrid {
    fn default() -> Self {
        FourierGrid {
            alpha: 1.5,
            n_points: 4096,
            eta: 0.25,
            rule: Quadrature::Trapezoid,
        }
    }
}

impl FourierGrid {
    pub fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= ALPHA_MAX) {
            return domain(format!(
                "alpha must lie in (0, {ALPHA_MAX}] (got {})",
                self.alpha
            ));
        }
        if self.n_points < 256 || !self.n_points.is_power_of_two() {
            return domain(format!(
                "n_points must be a power of two >= 256 (got {})",
                self.n_points
            ));
        }
        if !(self.eta > 0.0) {
            return domain(format!("eta must be positive (got {})", self.eta));
        }
        Ok(())
    }

    pub fn strike_spacing(&self) -> f64 {
        2.0 * PI / (self.n_points as f64 * self.eta)
    }
}

/// Interpolation nodes per strike. The call price in log-strike is sharply
/// curved for short maturities, so a cubic is not enough.
const STENCIL: usize = 8;

/// Calls on a uniform log-moneyness grid, per unit of spot.
struct CallGrid {
    k0: f64,
    dk: f64,
    values: Vec<f64>,
}

impl CallGrid {
    /// Lagrange interpolation on `STENCIL` nodes starting at node `first`.
    fn stencil(&self, k: f64, first: usize) -> f64 {
        let mut total = 0.0;
        for i in first..first + STENCIL {
            let xi = self.k0 + i as f64 * self.dk;
            let mut w = 1.0;
            for j in first..first + STENCIL {
                if j != i {
                    let xj = self.k0 + j as f64 * self.dk;
                    w *= (k - xj) / (xi - xj);
                }
            }
            total += w * self.values[i];
        }
        total
    }

    /// Centered value and the spread of the two stencils shifted by one node.
    fn interpolate(&self, k: f64) -> Result<(f64, f64)> {
        let pos = (k - self.k0) / self.dk;
        let n = self.values.len();
        let half = STENCIL / 2;
        if !(pos >= half as f64 && pos <= (n - half - 2) as f64) {
            return domain(format!(
                "log-moneyness {k} outside the Fourier strike grid; lower eta or raise n_points"
            ));
        }
        let first = pos.floor() as usize + 1 - half;
        let mid = self.stencil(k, first);
        let left = self.stencil(k, first - 1);
        let right = self.stencil(k, first + 1);
        Ok((mid, (mid - left).abs().max((mid - right).abs())))
    }
}

/// Damped call transform on the grid, for log price 0 at the conditioning time.
fn call_grid(ctx: &CharFnContext, t: f64, grid: &FourierGrid) -> Result<CallGrid> {
    let n = grid.n_points;
    let eta = grid.eta;
    // the damped transform needs E[S^(alpha+1)] < ∞
    let limit = ctx.critical_moment(t) - 1.0;
    let alpha = if grid.alpha < 0.5 * limit {
        grid.alpha
    } else {
        let capped = 0.5 * limit;
        log::debug!(
            "moment of order {} explodes before t = {t}; damping lowered from {} to {capped}",
            grid.alpha + 1.0,
            grid.alpha
        );
        capped
    };
    let dk = grid.strike_spacing();
    let b = 0.5 * n as f64 * dk;
    let k0 = -b;
    let horizon = t - ctx.state.s;
    let disc = (-ctx.r * horizon).exp();
    let mut buf: Vec<Complex64> = Vec::with_capacity(n);
    for j in 0..n {
        let v = j as f64 * eta;
        let lambda = Complex64::new(v, -(alpha + 1.0));
        let phi = ctx.log_charfn_delayed(lambda, t)?.exp();
        let denom = Complex64::new(alpha * alpha + alpha - v * v, (2.0 * alpha + 1.0) * v);
        let psi = disc * phi / denom;
        if !(psi.re.is_finite() && psi.im.is_finite()) {
            return Err(Error::Numerical(format!(
                "characteristic function not finite at v = {v}"
            )));
        }
        let weight = match (grid.rule, j) {
            (Quadrature::Trapezoid, 0) => 0.5,
            (Quadrature::Trapezoid, _) => 1.0,
            (Quadrature::Simpson, 0) => 1.0 / 3.0,
            (Quadrature::Simpson, _) if j % 2 == 1 => 4.0 / 3.0,
            (Quadrature::Simpson, _) => 2.0 / 3.0,
        };
        buf.push(Complex64::new(0.0, v * b).exp() * psi * eta * weight);
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let values = buf
        .iter()
        .enumerate()
        .map(|(u, z)| (-alpha * (k0 + u as f64 * dk)).exp() / PI * z.re)
        .collect();
    Ok(CallGrid { k0, dk, values })
}

/// Fourier call prices for maturity `t` (absolute time, `t > s`).
///
/// The error estimate combines the change when `eta` is halved on `2n`
/// points and the interpolation spread between neighbouring cubic stencils.
pub fn price_call_fourier(
    ctx: &CharFnContext,
    strikes: &[f64],
    t: f64,
    grid: &FourierGrid,
) -> Result<Vec<PriceResult>> {
    let coarse = fourier_calls(ctx, strikes, t, grid)?;
    let fine_grid = FourierGrid {
        eta: 0.5 * grid.eta,
        n_points: 2 * grid.n_points,
        ..*grid
    };
    let fine = fourier_calls(ctx, strikes, t, &fine_grid)?;
    Ok(coarse
        .into_iter()
        .zip(fine)
        .map(|((value, interp), (fine_value, _))| {
            PriceResult::new(value, Method::Fourier, (value - fine_value).abs() + interp)
        })
        .collect())
}

/// Fourier call prices without the refinement pass; returns `(value, interpolation spread)`.
pub fn fourier_calls(
    ctx: &CharFnContext,
    strikes: &[f64],
    t: f64,
    grid: &FourierGrid,
) -> Result<Vec<(f64, f64)>> {
    grid.check()?;
    if !(t > ctx.state.s) {
        return domain(format!(
            "maturity {t} must exceed the valuation time {}",
            ctx.state.s
        ));
    }
    if let Some(k) = strikes.iter().find(|k| !(**k > 0.0)) {
        return domain(format!("strikes must be positive (got {k})"));
    }
    let spot = ctx.state.x_s.exp();
    let unit = ctx.clone().with_state(ctx.state.s, 0.0, ctx.state.i_lag);
    let calls = call_grid(&unit, t, grid)?;
    let disc = (-ctx.r * (t - ctx.state.s)).exp();
    strikes
        .iter()
        .map(|&k| {
            let m = k / spot;
            let (v, spread) = calls.interpolate(m.ln())?;
            // no-arbitrage bounds for a call per unit of spot
            let v = v.clamp((1.0 - m * disc).max(0.0), 1.0);
            Ok((spot * v, spot * spread))
        })
        .collect()
}

fn black_scholes_total(s0: f64, k: f64, total_var: f64, disc: f64, is_call: bool) -> f64 {
    let fwd_k = k * disc;
    if total_var <= 0.0 {
        return if is_call {
            (s0 - fwd_k).max(0.0)
        } else {
            (fwd_k - s0).max(0.0)
        };
    }
    let sd = total_var.sqrt();
    let d1 = ((s0 / fwd_k).ln() + 0.5 * total_var) / sd;
    let d2 = d1 - sd;
    if is_call {
        (s0 * norm_cdf(d1) - fwd_k * norm_cdf(d2)).max(0.0)
    } else {
        (fwd_k * norm_cdf(-d2) - s0 * norm_cdf(-d1)).max(0.0)
    }
}

/// Closed-form price when the whole horizon lies inside the delay.
///
/// The log price is then normal with variance `σ_P² ∫_s^{s+T} φ_I(u-τ) du`.
pub fn price_lognormal(
    ctx: &CharFnContext,
    strike: f64,
    t: f64,
    is_call: bool,
) -> Result<PriceResult> {
    let s = ctx.state.s;
    if !(t >= s) {
        return domain(format!("maturity {t} precedes the valuation time {s}"));
    }
    if t > ctx.tau {
        return domain(format!(
            "maturity {t} exceeds tau = {}: use the Fourier method",
            ctx.tau
        ));
    }
    if !(strike > 0.0) {
        return domain(format!("strike must be positive (got {strike})"));
    }
    let j = ctx.history.integrate_delayed(s, t, ctx.tau)?;
    let total_var = ctx.sigma_p * ctx.sigma_p * j;
    let disc = (-ctx.r * (t - s)).exp();
    let value = black_scholes_total(ctx.state.x_s.exp(), strike, total_var, disc, is_call);
    Ok(PriceResult::new(value, Method::Lognormal, 0.0))
}

/// Put from a call by parity, `P = C - S₀ + K e^{-rT}`, floored at zero.
pub fn price_put(call: &PriceResult, s0: f64, strike: f64, t: f64, r: f64) -> PriceResult {
    let raw = call.value - s0 + strike * (-r * t).exp();
    PriceResult {
        value: raw.max(0.0),
        method: call.method,
        err_estimate: call.err_estimate,
        floored: raw < -call.err_estimate,
    }
}

pub fn price_black_scholes(
    s0: f64,
    k: f64,
    sigma: f64,
    r: f64,
    t: f64,
    is_call: bool,
) -> PriceResult {
    let value = black_scholes_total(s0, k, sigma * sigma * t.max(0.0), (-r * t).exp(), is_call);
    PriceResult::new(value, Method::BlackScholes, 0.0)
}

/// Gaussian MLE of the diffusion volatility, `σ̂ = sqrt(Σ(r_j - r̄)² / (NΔ))`.
pub fn fit_bs_sigma(log_returns: &[f64], delta: f64) -> Result<f64> {
    if log_returns.len() < 2 {
        return domain("need at least two returns");
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    let n = log_returns.len() as f64;
    let mean = log_returns.iter().sum::<f64>() / n;
    let ss: f64 = log_returns.iter().map(|r| (r - mean).powi(2)).sum();
    Ok((ss / (n * delta)).sqrt())
}

/// One European option for the Monte Carlo pricer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOption {
    pub strike: f64,
    pub expiry: f64,
    pub is_call: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_paths: usize,
    pub seed: u64,
    /// Interest steps per year for the trapezoid of `∫ I_{u-τ} du`.
    pub steps_per_year: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            n_paths: 100_000,
            seed: 0,
            steps_per_year: 720,
        }
    }
}

const MC_CHUNK: usize = 4096;

/// Monte Carlo prices of several options sharing one set of paths.
///
/// Interest follows the exact CIR transition under `(ã, b̃)` from `φ_I(0)`.
/// Given `J = ∫_0^T I_{u-τ} du` (history part exact, simulated part by the
/// trapezoid rule), `X_T = x + rT - σ_P² J/2 + σ_P √J Z`. Paths are drawn in
/// fixed chunks with their own streams, so results do not depend on the
/// thread count.
pub fn price_mc_batch(
    p: &ModelParams,
    rn: &RNParams,
    h: &InterestHistory,
    s0: f64,
    options: &[McOption],
    settings: &McSettings,
) -> Result<Vec<PriceResult>> {
    let violations = validate_params(p, h);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return domain(msg.join("; "));
    }
    if !(s0 > 0.0) {
        return domain(format!("spot must be positive (got {s0})"));
    }
    if settings.n_paths < 2 || settings.steps_per_year == 0 {
        return domain("need at least two paths and one step per year");
    }
    if let Some(o) = options
        .iter()
        .find(|o| !(o.expiry > 0.0) || !(o.strike >= 0.0))
    {
        return domain(format!("invalid option {o:?}"));
    }
    let cir = CirParams::new(rn.a_tilde, rn.b_tilde, p.sigma_i);
    if !(cir.a > 0.0) || !(2.0 * cir.a * cir.b >= cir.sigma_i * cir.sigma_i) {
        return domain(format!(
            "risk-neutral parameters violate positivity: {rn:?}"
        ));
    }
    // simulated-time grid: uniform steps plus every T - τ
    let dt = 1.0 / settings.steps_per_year as f64;
    let mut marks: Vec<f64> = options
        .iter()
        .map(|o| o.expiry - p.tau)
        .filter(|&x| x > 0.0)
        .collect();
    let end = marks.iter().copied().fold(0.0, f64::max);
    let mut k = 1;
    while (k as f64) * dt < end {
        marks.push(k as f64 * dt);
        k += 1;
    }
    marks.sort_by(f64::total_cmp);
    marks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    // per option: deterministic history part and index of its end mark
    let fixed: Vec<(f64, Option<usize>)> = options
        .iter()
        .map(|o| {
            let lo = -p.tau;
            let hi = (o.expiry - p.tau).min(0.0);
            let part = h.integral(lo, hi)?;
            let idx = if o.expiry > p.tau {
                Some(
                    marks
                        .iter()
                        .position(|&m| (m - (o.expiry - p.tau)).abs() < 1e-12)
                        .expect("mark inserted"),
                )
            } else {
                None
            };
            Ok((part, idx))
        })
        .collect::<Result<_>>()?;

    let n_chunks = settings.n_paths.div_ceil(MC_CHUNK);
    let sums: Vec<Result<Vec<(f64, f64)>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(c as u64);
            let paths = MC_CHUNK.min(settings.n_paths - c * MC_CHUNK);
            let mut acc = vec![(0.0, 0.0); options.len()];
            let mut cum = vec![0.0; marks.len()];
            for _ in 0..paths {
                let (mut y, mut prev_t, mut total) = (h.current(), 0.0, 0.0);
                for (i, &m) in marks.iter().enumerate() {
                    let next = cir_step(y, &cir, m - prev_t, &mut rng)?;
                    total += 0.5 * (m - prev_t) * (y + next);
                    cum[i] = total;
                    y = next;
                    prev_t = m;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                for (o, (&(part, idx), slot)) in
                    options.iter().zip(fixed.iter().zip(acc.iter_mut()))
                {
                    let j = part + idx.map_or(0.0, |i| cum[i]);
                    let var = p.sigma_p * p.sigma_p * j;
                    let x = s0.ln() + p.r * o.expiry - 0.5 * var + var.sqrt() * z;
                    let st = x.exp();
                    let payoff = if o.is_call {
                        (st - o.strike).max(0.0)
                    } else {
                        (o.strike - st).max(0.0)
                    };
                    let v = (-p.r * o.expiry).exp() * payoff;
                    slot.0 += v;
                    slot.1 += v * v;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![(0.0, 0.0); options.len()];
    for chunk in sums {
        for (t, c) in total.iter_mut().zip(chunk?) {
            t.0 += c.0;
            t.1 += c.1;
        }
    }
    let n = settings.n_paths as f64;
    Ok(total
        .into_iter()
        .map(|(s, s2)| {
            let mean = s / n;
            let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
            PriceResult::new(mean, Method::Mc, (var / n).sqrt())
        })
        .collect())
}

/// Single-option Monte Carlo price; see [`price_mc_batch`].
#[allow(clippy::too_many_arguments)]
pub fn price_mc(
    p: &ModelParams,
    rn: &RNParams,
    h: &InterestHistory,
    s0: f64,
    is_call: bool,
    strike: f64,
    expiry: f64,
    settings: &McSettings,
) -> Result<PriceResult> {
    let opt = McOption {
        strike,
        expiry,
        is_call,
    };
    Ok(price_mc_batch(p, rn, h, s0, &[opt], settings)?[0])
}
