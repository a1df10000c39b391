//! WebAssembly bindings for the static demo page in `web/`.
//!
//! Each export takes plain numbers and returns a JSON string; the page
//! parses it and draws with a 2D canvas.

use attention_sv::estimate::{fit_cir_mle, generalized_residuals, ks_test_normal};
use attention_sv::params::{InterestHistory, ModelParams, RNParams};
use attention_sv::pricer::{price_black_scholes, price_call_fourier, FourierGrid};
use attention_sv::riskneutral::CharFnContext;
use attention_sv::sim::simulate_pair;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct Path {
    pub time: Vec<f64>,
    pub interest: Vec<f64>,
    pub price: Vec<f64>,
}

fn model(a: f64, b: f64, sigma_i: f64, sigma_p: f64, tau: f64, r: f64) -> ModelParams {
    ModelParams {
        a,
        b,
        sigma_i,
        mu: 0.0,
        sigma_p,
        tau,
        r,
    }
}

// flat history at b covering the delay with whole grid steps
fn flat_history(b: f64, tau: f64, delta: f64) -> attention_sv::Result<InterestHistory> {
    let steps = (tau / delta).ceil().max(1.0);
    InterestHistory::constant(b, steps * delta)
}

/// Daily path of interest and price over `days`, starting from `spot`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    a: f64,
    b: f64,
    sigma_i: f64,
    sigma_p: f64,
    tau: f64,
    spot: f64,
    days: usize,
    seed: u64,
) -> attention_sv::Result<Path> {
    let delta = 1.0 / 365.0;
    let p = model(a, b, sigma_i, sigma_p, tau, 0.0);
    let h = flat_history(b, tau, delta)?;
    let path = simulate_pair(&p, &h, spot.ln(), days, delta, seed)?;
    let m = path.history_len();
    Ok(Path {
        time: (0..=days).map(|j| j as f64 * delta).collect(),
        interest: path.interest[m..].to_vec(),
        price: path.log_price.iter().map(|x| x.exp()).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct InterestFit {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    pub converged: bool,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// CIR maximum likelihood on a daily interest series, with the KS test of
/// its generalized residuals.
pub fn fit_interest(series: &[f64]) -> attention_sv::Result<InterestFit> {
    let delta = 1.0 / 365.0;
    let fit = fit_cir_mle(series, delta, None)?;
    let res = generalized_residuals(series, &fit.params(), delta)?;
    let ks = ks_test_normal(&res.values)?;
    Ok(InterestFit {
        a: fit.a,
        b: fit.b,
        sigma_i: fit.sigma_i,
        converged: fit.converged,
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
    })
}

#[derive(Debug, Serialize)]
pub struct Smile {
    pub strikes: Vec<f64>,
    pub model: Vec<f64>,
    /// Black-Scholes with `σ = σ_P √b̃`.
    pub black_scholes: Vec<f64>,
    pub max_err_estimate: f64,
}

/// Call prices across `n` strikes between `lo` and `hi` times spot.
#[allow(clippy::too_many_arguments)]
pub fn call_curve(
    a: f64,
    b: f64,
    sigma_i: f64,
    sigma_p: f64,
    tau: f64,
    r: f64,
    a_tilde: f64,
    b_tilde: f64,
    spot: f64,
    expiry: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> attention_sv::Result<Smile> {
    let p = model(a, b, sigma_i, sigma_p, tau, r);
    let rn = RNParams::from_tilde(&p, a_tilde, b_tilde)?;
    let h = flat_history(b_tilde, tau, 1.0 / 365.0)?;
    let ctx = CharFnContext::at_origin(&p, rn, h, spot.ln());
    let n = n.max(2);
    let strikes: Vec<f64> = (0..n)
        .map(|i| spot * (lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect();
    let calls = price_call_fourier(&ctx, &strikes, expiry, &FourierGrid::default())?;
    let vol = sigma_p * b_tilde.sqrt();
    Ok(Smile {
        black_scholes: strikes
            .iter()
            .map(|&k| price_black_scholes(spot, k, vol, r, expiry, true).value)
            .collect(),
        model: calls.iter().map(|c| c.value).collect(),
        max_err_estimate: calls.iter().map(|c| c.err_estimate).fold(0.0, f64::max),
        strikes,
    })
}

fn to_js<T: Serialize>(r: attention_sv::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulatePath)]
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    a: f64,
    b: f64,
    sigma_i: f64,
    sigma_p: f64,
    tau: f64,
    spot: f64,
    days: usize,
    seed: u32,
) -> Result<String, JsError> {
    to_js(simulate(
        a,
        b,
        sigma_i,
        sigma_p,
        tau,
        spot,
        days,
        seed as u64,
    ))
}

#[wasm_bindgen(js_name = fitInterest)]
pub fn fit_interest_js(series: Vec<f64>) -> Result<String, JsError> {
    to_js(fit_interest(&series))
}

#[wasm_bindgen(js_name = callCurve)]
#[allow(clippy::too_many_arguments)]
pub fn call_curve_js(
    a: f64,
    b: f64,
    sigma_i: f64,
    sigma_p: f64,
    tau: f64,
    r: f64,
    a_tilde: f64,
    b_tilde: f64,
    spot: f64,
    expiry: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<String, JsError> {
    to_js(call_curve(
        a, b, sigma_i, sigma_p, tau, r, a_tilde, b_tilde, spot, expiry, lo, hi, n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_has_requested_length() {
        let p = simulate(30.0, 15.0, 0.6, 0.2, 0.025, 20000.0, 100, 1).unwrap();
        assert_eq!(p.price.len(), 101);
        assert_eq!(p.interest.len(), 101);
        assert!((p.price[0] - 20000.0).abs() < 1e-8);
        assert_eq!(
            p,
            simulate(30.0, 15.0, 0.6, 0.2, 0.025, 20000.0, 100, 1).unwrap()
        );
    }

    #[test]
    fn fit_recovers_long_run_mean() {
        let p = simulate(30.0, 15.0, 0.6, 0.2, 0.025, 20000.0, 3000, 2).unwrap();
        let f = fit_interest(&p.interest).unwrap();
        assert!((f.b - 15.0).abs() < 0.5, "{f:?}");
        assert!(f.ks_p_value > 0.0 && f.ks_p_value <= 1.0);
    }

    #[test]
    fn curve_is_decreasing_and_near_black_scholes() {
        // with ã large, interest stays close to b̃ and the model is near Black-Scholes
        let s = call_curve(
            30.0, 15.0, 0.6, 0.2, 0.025, 0.0, 200.0, 15.0, 100.0, 0.5, 0.8, 1.2, 9,
        )
        .unwrap();
        assert!(s.model.windows(2).all(|w| w[1] < w[0]));
        for (m, b) in s.model.iter().zip(&s.black_scholes) {
            assert!((m - b).abs() < 0.05, "{m} vs {b}");
        }
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(simulate(-1.0, 15.0, 0.6, 0.2, 0.025, 20000.0, 10, 1).is_err());
        assert!(
            call_curve(30.0, 15.0, 0.6, 0.2, 0.025, 0.0, -1.0, 15.0, 100.0, 0.5, 0.8, 1.2, 9)
                .is_err()
        );
    }
}
