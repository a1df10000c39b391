//! Conditional maximum likelihood for the log-price drift and volatility, and
//! selection of the delay by likelihood over the candidate lags.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::params::SeriesPair;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of free parameters of each candidate price model.
pub const PRICE_MODEL_PARAMS: usize = 2;

/// Trapezoid estimates `z_j = (Δ/2)(y_{j-k} + y_{j-1-k})` for `j = 1..=N`.
///
/// `proxy` holds `y_{-M}, ..., y_N` with `history_len = M`.
pub fn integrated_interest(
    proxy: &[f64],
    history_len: usize,
    lag: usize,
    delta: f64,
) -> Result<Vec<f64>> {
    if lag > history_len {
        return domain(format!(
            "lag {lag} needs {lag} history points but only {history_len} are available"
        ));
    }
    if proxy.len() < history_len + 2 {
        return domain("proxy too short to form a single return interval");
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    let n = proxy.len() - history_len - 1;
    let base = history_len - lag;
    Ok((1..=n)
        .map(|j| 0.5 * delta * (proxy[base + j] + proxy[base + j - 1]))
        .collect())
}

/// Closed-form conditional MLE of `(μ, σ_P)` given the integrated interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceCmle {
    pub mu: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    pub loglik: f64,
    /// Set when every return equals `μ̂Δ`, so `σ̂_P = 0` and the likelihood is unbounded.
    pub degenerate: bool,
}

/// `ln L(μ, σ_P) = Σ ln N(r_j | μΔ, σ_P² z_j)`.
pub fn price_loglik(returns: &[f64], z: &[f64], delta: f64, mu: f64, sigma_p: f64) -> f64 {
    let s2 = sigma_p * sigma_p;
    returns
        .iter()
        .zip(z)
        .map(|(r, zj)| {
            let v = s2 * zj;
            let e = r - mu * delta;
            -0.5 * (LN_2PI + v.ln()) - 0.5 * e * e / v
        })
        .sum()
}

/// `μ̂ = Σ(r_j/z_j) / (Δ Σ 1/z_j)`, `σ̂_P² = (1/N) Σ (r_j - μ̂Δ)²/z_j`.
pub fn fit_price_cmle(returns: &[f64], z: &[f64], delta: f64) -> Result<PriceCmle> {
    if returns.len() != z.len() {
        return domain(format!(
            "returns ({}) and integrated interest ({}) differ in length",
            returns.len(),
            z.len()
        ));
    }
    if returns.len() < 2 {
        return domain("conditional MLE needs at least two returns");
    }
    if let Some((j, v)) = z.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return domain(format!("integrated interest z[{j}] = {v} is not positive"));
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    let n = returns.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, zj) in returns.iter().zip(z) {
        num += r / zj;
        den += 1.0 / zj;
    }
    let mu = num / (delta * den);
    let ss: f64 = returns
        .iter()
        .zip(z)
        .map(|(r, zj)| (r - mu * delta).powi(2) / zj)
        .sum();
    let sigma_p = (ss / n).sqrt();
    let degenerate = sigma_p == 0.0;
    let loglik = if degenerate {
        f64::INFINITY
    } else {
        // at the optimum the quadratic term collapses to N/2
        let ln_z: f64 = z.iter().map(|zj| zj.ln()).sum();
        -n * sigma_p.ln() - 0.5 * (n * LN_2PI + ln_z) - 0.5 * n
    };
    Ok(PriceCmle {
        mu,
        sigma_p,
        loglik,
        degenerate,
    })
}

/// One candidate lag of the model-selection table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCriterion {
    pub lag: usize,
    pub mu: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Price-process estimates at the selected lag, with the full criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceFit {
    pub mu: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    pub tau: f64,
    pub lag: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub degenerate: bool,
    pub criterion_table: Vec<LagCriterion>,
}

/// Fits every lag `ℓ = 0..=M` and keeps the one with the largest conditional
/// log-likelihood, breaking ties toward the smaller lag.
pub fn select_lag(series: &SeriesPair) -> Result<PriceFit> {
    series.check()?;
    let m = series.max_lag();
    let n = series.n();
    let returns = series.returns();
    let mut table = Vec::with_capacity(m + 1);
    let mut best: Option<(usize, PriceCmle)> = None;
    for lag in 0..=m {
        let z = integrated_interest(&series.proxy, m, lag, series.delta)?;
        let fit = fit_price_cmle(&returns, &z, series.delta)?;
        let q = PRICE_MODEL_PARAMS as f64;
        table.push(LagCriterion {
            lag,
            mu: fit.mu,
            sigma_p: fit.sigma_p,
            loglik: fit.loglik,
            aic: 2.0 * q - 2.0 * fit.loglik,
            bic: q * (n as f64).ln() - 2.0 * fit.loglik,
        });
        if best.as_ref().is_none_or(|(_, b)| fit.loglik > b.loglik) {
            best = Some((lag, fit));
        }
    }
    let (lag, fit) = best.expect("at least lag 0 is fitted");
    let row = table[lag];
    Ok(PriceFit {
        mu: fit.mu,
        sigma_p: fit.sigma_p,
        tau: lag as f64 * series.delta,
        lag,
        loglik: fit.loglik,
        aic: row.aic,
        bic: row.bic,
        degenerate: fit.degenerate,
        criterion_table: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_proxy_gives_delta_times_level() {
        let proxy = vec![7.0; 12];
        let z = integrated_interest(&proxy, 3, 2, 0.5).unwrap();
        assert_eq!(z.len(), 8);
        assert!(z.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn hand_evaluated_trapezoid() {
        let z = integrated_interest(&[1.0, 3.0], 0, 0, 1.0).unwrap();
        assert_eq!(z, vec![2.0]);
    }

    #[test]
    fn lag_beyond_history_rejected() {
        assert!(integrated_interest(&[1.0, 2.0, 3.0], 1, 2, 1.0).is_err());
    }

    #[test]
    fn hand_evaluated_cmle() {
        let f = fit_price_cmle(&[0.01, 0.03], &[1.0, 1.0], 1.0).unwrap();
        assert!((f.mu - 0.02).abs() < 1e-15);
        assert!((f.sigma_p - 0.01).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_reduce_to_sample_mean() {
        let r = [0.1, -0.05, 0.2, 0.07];
        let f = fit_price_cmle(&r, &[0.3; 4], 0.25).unwrap();
        let mean = r.iter().sum::<f64>() / 4.0;
        assert!((f.mu - mean / 0.25).abs() < 1e-14);
    }

    #[test]
    fn closed_form_is_a_local_maximum() {
        let r = [0.012, -0.004, 0.02, 0.0, -0.015, 0.007];
        let z = [0.04, 0.05, 0.045, 0.041, 0.06, 0.038];
        let d = 1.0 / 365.0;
        let f = fit_price_cmle(&r, &z, d).unwrap();
        let at = price_loglik(&r, &z, d, f.mu, f.sigma_p);
        assert!((at - f.loglik).abs() < 1e-10);
        for eps in [1e-4, -1e-4] {
            assert!(price_loglik(&r, &z, d, f.mu + eps, f.sigma_p) < at);
            assert!(price_loglik(&r, &z, d, f.mu, f.sigma_p + eps) < at);
        }
    }

    #[test]
    fn nonpositive_z_rejected() {
        assert!(fit_price_cmle(&[0.1, 0.2], &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn identical_returns_flag_degenerate() {
        let f = fit_price_cmle(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(f.sigma_p, 0.0);
        assert!(f.degenerate);
    }

    #[test]
    fn z_scaling_rescales_sigma_only() {
        let r = [0.012, -0.004, 0.02, 0.0];
        let z = [0.04, 0.05, 0.045, 0.041];
        let c = 2.7;
        let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
        let a = fit_price_cmle(&r, &z, 0.01).unwrap();
        let b = fit_price_cmle(&r, &zc, 0.01).unwrap();
        assert!((a.mu - b.mu).abs() < 1e-12 * a.mu.abs().max(1.0));
        assert!((b.sigma_p - a.sigma_p / c.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn single_candidate_lag() {
        let s = SeriesPair::new(0.1, vec![0.0, 0.1, 0.05, 0.2], vec![1.0, 1.1, 0.9, 1.2]).unwrap();
        let fit = select_lag(&s).unwrap();
        assert_eq!(fit.lag, 0);
        assert_eq!(fit.tau, 0.0);
        assert_eq!(fit.criterion_table.len(), 1);
    }

    #[test]
    fn aic_and_bic_rank_identically() {
        let proxy: Vec<f64> = (0..40).map(|i| 5.0 + (i as f64 * 0.7).sin()).collect();
        let prices: Vec<f64> = (0..35).map(|i| 0.01 * (i as f64 * 1.3).cos()).collect();
        let s = SeriesPair::new(0.01, prices, proxy).unwrap();
        let fit = select_lag(&s).unwrap();
        let by = |key: fn(&LagCriterion) -> f64| {
            let mut v: Vec<usize> = (0..fit.criterion_table.len()).collect();
            v.sort_by(|&i, &j| {
                key(&fit.criterion_table[i]).total_cmp(&key(&fit.criterion_table[j]))
            });
            v
        };
        assert_eq!(by(|c| c.aic), by(|c| c.bic));
        assert_eq!(by(|c| c.aic)[0], fit.lag);
    }

    #[test]
    fn ties_go_to_the_smallest_lag() {
        // constant proxy: every lag has identical likelihood
        let s = SeriesPair::new(0.1, vec![0.0, 0.1, 0.05, 0.2], vec![2.0; 7]).unwrap();
        assert_eq!(select_lag(&s).unwrap().lag, 0);
    }
}
