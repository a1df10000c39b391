//! Quote filtering and RMSE calibration of the risk-neutral interest
//! parameters `(ã, b̃)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::params::{validate_params, InterestHistory, ModelParams, OptionQuote, RNParams};
use crate::pricer::{fourier_calls, FourierGrid};
use crate::riskneutral::CharFnContext;

/// Largest accepted relative spread `(ask - bid) / ask` (exclusive).
pub const MAX_SPREAD_RATIO: f64 = 0.1;

/// Smallest to largest eigenvalue ratio of the scaled Hessian below which
/// the fit is reported as weakly identified.
pub const FLAT_RATIO: f64 = 1e-4;

/// A quote that passed [`filter_quotes`], with its mid price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    #[serde(flatten)]
    pub quote: OptionQuote,
    pub mid: f64,
}

/// Keeps quotes with `bid > 0`, `expiry > 0` and `(ask - bid)/ask < 0.1`.
pub fn filter_quotes(quotes: &[OptionQuote]) -> Vec<MarketQuote> {
    quotes
        .iter()
        .filter(|q| {
            q.bid > 0.0
                && q.ask.is_finite()
                && q.ask >= q.bid
                && q.expiry > 0.0
                && q.strike > 0.0
                && (q.ask - q.bid) / q.ask < MAX_SPREAD_RATIO
        })
        .map(|q| MarketQuote {
            quote: q.clone(),
            mid: q.mid(),
        })
        .collect()
}

pub fn rmse(model: &[f64], mids: &[f64]) -> Result<f64> {
    if model.len() != mids.len() {
        return domain(format!(
            "length mismatch: {} model prices, {} mids",
            model.len(),
            mids.len()
        ));
    }
    if model.is_empty() {
        return domain("rmse of an empty set");
    }
    let ss: f64 = model.iter().zip(mids).map(|(m, q)| (m - q).powi(2)).sum();
    Ok((ss / model.len() as f64).sqrt())
}

/// One row of the fitted quote table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteFit {
    pub strike: f64,
    pub expiry: f64,
    pub is_call: bool,
    pub bid: f64,
    pub ask: f64,
    pub mid: f64,
    pub model_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub rn: RNParams,
    pub rmse: f64,
    /// RMSE at `λ_a = λ_ab = 0`.
    pub uncalibrated_rmse: f64,
    pub n_quotes: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the objective is nearly flat along some direction in
    /// `(ln ã, ln b̃)`; the prices are then pinned down better than the parameters.
    pub weakly_identified: bool,
    /// Smallest over largest eigenvalue of the Hessian of `RMSE²` in `(ln ã, ln b̃)`.
    pub curvature_ratio: f64,
    pub per_quote: Vec<QuoteFit>,
}

impl CalibrationResult {
    /// Writes the per-quote table as `strike,expiry,is_call,bid,ask,mid,model_price`.
    pub fn write_quotes_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            file: "<quotes>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_quote {
            w.serialize(row).map_err(io)?;
        }
        w.flush().map_err(|e| io(e.into()))
    }
}

/// Model prices of `quotes` under `rn`, valued at time 0 with spot `s0`.
///
/// Calls come from one Fourier grid per expiry; puts follow by parity.
pub fn model_prices(
    p: &ModelParams,
    rn: RNParams,
    h: &InterestHistory,
    quotes: &[MarketQuote],
    s0: f64,
    grid: &FourierGrid,
) -> Result<Vec<f64>> {
    let ctx = CharFnContext::at_origin(p, rn, h.clone(), s0.ln());
    let mut expiries: Vec<f64> = quotes.iter().map(|q| q.quote.expiry).collect();
    expiries.sort_by(f64::total_cmp);
    expiries.dedup();
    let by_expiry: Vec<Vec<(usize, f64)>> = expiries
        .par_iter()
        .map(|&t| {
            let idx: Vec<usize> = (0..quotes.len())
                .filter(|&i| quotes[i].quote.expiry == t)
                .collect();
            let strikes: Vec<f64> = idx.iter().map(|&i| quotes[i].quote.strike).collect();
            let calls = fourier_calls(&ctx, &strikes, t, grid)?;
            let disc = (-p.r * t).exp();
            Ok(idx
                .iter()
                .zip(calls)
                .map(|(&i, (c, _))| {
                    let q = &quotes[i].quote;
                    let v = if q.is_call {
                        c
                    } else {
                        (c - s0 + q.strike * disc).max(0.0)
                    };
                    (i, v)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; quotes.len()];
    for (i, v) in by_expiry.into_iter().flatten() {
        out[i] = v;
    }
    Ok(out)
}

fn tilde_from_log(p: &ModelParams, x: &[f64]) -> Option<RNParams> {
    RNParams::from_tilde(p, x[0].exp(), x[1].exp()).ok()
}

/// Chooses `(ã, b̃)` minimizing the RMSE between model and mid prices.
///
/// The search runs in `(ln ã, ln b̃)` with the positivity condition
/// `2ãb̃ ≥ σ_I²` as a penalty. Nelder-Mead starts from the uncalibrated
/// point and from the two best points of a coarse feasible grid; the
/// uncalibrated point is kept if nothing beats it.
pub fn calibrate_rn(
    p: &ModelParams,
    h: &InterestHistory,
    quotes: &[MarketQuote],
    s0: f64,
    grid: &FourierGrid,
) -> Result<CalibrationResult> {
    if quotes.is_empty() {
        return domain("calibration needs at least one quote");
    }
    let violations = validate_params(p, h);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return domain(msg.join("; "));
    }
    if !(s0 > 0.0) {
        return domain(format!("spot must be positive (got {s0})"));
    }
    let mids: Vec<f64> = quotes.iter().map(|q| q.mid).collect();
    let scale = mids.iter().map(|m| m.abs()).sum::<f64>() / mids.len() as f64 + 1e-300;
    let sig2 = p.sigma_i * p.sigma_i;

    let objective = |x: &[f64]| -> f64 {
        let (a, b) = (x[0].exp(), x[1].exp());
        let gap = sig2 - 2.0 * a * b;
        if gap > 0.0 || !a.is_finite() || !b.is_finite() {
            return 1e6 * (1.0 + gap.max(0.0) / sig2);
        }
        match tilde_from_log(p, x)
            .and_then(|rn| model_prices(p, rn, h, quotes, s0, grid).ok())
            .and_then(|m| rmse(&m, &mids).ok())
        {
            Some(v) if v.is_finite() => v / scale,
            _ => 1e6,
        }
    };

    let origin = vec![p.a.ln(), p.b.ln()];
    let f_origin = objective(&origin);
    if !(f_origin < 1e6) {
        return Err(Error::Numerical(
            "pricing failed at the uncalibrated parameters".into(),
        ));
    }

    let mut grid_pts: Vec<(Vec<f64>, f64)> = [0.1, 0.3, 1.0, 3.0, 10.0]
        .iter()
        .flat_map(|&fa| {
            [0.5, 0.8, 1.25, 2.0]
                .iter()
                .map(move |&fb| vec![(p.a * fa).ln(), (p.b * fb).ln()])
        })
        .filter(|x| 2.0 * x[0].exp() * x[1].exp() >= sig2)
        .map(|x| {
            let v = objective(&x);
            (x, v)
        })
        .collect();
    grid_pts.sort_by(|a, b| a.1.total_cmp(&b.1));

    let opts = NelderMeadOptions {
        f_tol: 1e-10,
        x_tol: 1e-7,
        max_evals: 1500,
        restarts: 2,
    };
    let mut starts = vec![origin.clone()];
    starts.extend(grid_pts.iter().take(2).map(|(x, _)| x.clone()));
    let mut best_x = origin.clone();
    let mut best_f = f_origin;
    let mut converged = false;
    let mut iterations = 0;
    for x0 in &starts {
        let m = nelder_mead(objective, x0, &[0.5, 0.3], &opts);
        iterations += m.iterations;
        if m.value < best_f || (m.value == best_f && m.converged && !converged) {
            best_x = m.x;
            best_f = m.value;
            converged = m.converged;
        } else if m.value == best_f {
            converged |= m.converged;
        }
    }
    if best_x == origin && !converged {
        log::warn!("no start improved on the uncalibrated parameters");
    }

    let rn = tilde_from_log(p, &best_x)
        .ok_or_else(|| Error::Numerical(format!("calibrated point {best_x:?} is infeasible")))?;
    let prices = model_prices(p, rn, h, quotes, s0, grid)?;
    let fit = rmse(&prices, &mids)?;
    let uncal = f_origin * scale;
    let ratio = curvature_ratio(&objective, &best_x);
    let per_quote = quotes
        .iter()
        .zip(&prices)
        .map(|(q, &m)| QuoteFit {
            strike: q.quote.strike,
            expiry: q.quote.expiry,
            is_call: q.quote.is_call,
            bid: q.quote.bid,
            ask: q.quote.ask,
            mid: q.mid,
            model_price: m,
        })
        .collect();
    Ok(CalibrationResult {
        rn,
        rmse: fit,
        uncalibrated_rmse: uncal,
        n_quotes: quotes.len(),
        iterations,
        converged,
        weakly_identified: !(ratio >= FLAT_RATIO),
        curvature_ratio: ratio,
        per_quote,
    })
}

// Hessian of f² by central differences; its eigenvalue spread measures how
// well the two directions are separated.
fn curvature_ratio<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let g = |a: f64, b: f64| f(&[x[0] + a, x[1] + b]).powi(2);
    let e = 1e-3;
    let f0 = g(0.0, 0.0);
    let haa = (g(e, 0.0) - 2.0 * f0 + g(-e, 0.0)) / (e * e);
    let hbb = (g(0.0, e) - 2.0 * f0 + g(0.0, -e)) / (e * e);
    let hab = (g(e, e) - g(e, -e) - g(-e, e) + g(-e, -e)) / (4.0 * e * e);
    let tr = 0.5 * (haa + hbb);
    let disc = (0.25 * (haa - hbb).powi(2) + hab * hab).sqrt();
    let (lo, hi) = ((tr - disc).abs(), (tr + disc).abs());
    if !(hi > 0.0) {
        return 0.0;
    }
    lo.min(hi) / lo.max(hi)
}
