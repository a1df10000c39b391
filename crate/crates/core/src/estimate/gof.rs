//! Generalized Gaussian residuals of a fitted CIR process and the one-sample
//! Kolmogorov–Smirnov test used to judge them.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::params::CirParams;
use crate::special::{ncx2_cdf_pair, norm_cdf, norm_quantile};

/// Transition probabilities are clamped to `[CLAMP, 1 - CLAMP]` before the normal quantile.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub values: Vec<f64>,
    /// Indices whose transition probability had to be clamped.
    pub clamped: Vec<usize>,
}

/// `ε_j = Φ⁻¹(F(y_{j+1} | y_j))` with `F` the CIR transition CDF.
pub fn generalized_residuals(series: &[f64], cir: &CirParams, delta: f64) -> Result<Residuals> {
    if series.len() < 2 {
        return domain("residuals need at least two observations");
    }
    if !(cir.a > 0.0) || !(cir.sigma_i > 0.0) || !(cir.feller_ratio() > 0.0) {
        return domain(format!("invalid CIR parameters {cir:?}"));
    }
    if let Some((i, v)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return domain(format!("observation {i} is not positive ({v})"));
    }
    let s2 = cir.sigma_i * cir.sigma_i;
    let c = 2.0 * cir.a / (s2 * (-(-cir.a * delta).exp_m1()));
    let df = 4.0 * cir.a * cir.b / s2;
    let decay = (-cir.a * delta).exp();
    let mut values = Vec::with_capacity(series.len() - 1);
    let mut clamped = Vec::new();
    for (j, w) in series.windows(2).enumerate() {
        let (lower, upper) = ncx2_cdf_pair(2.0 * c * w[1], df, 2.0 * c * w[0] * decay);
        let e = if lower <= 0.5 {
            if lower < CLAMP {
                clamped.push(j);
            }
            norm_quantile(lower.max(CLAMP))
        } else {
            if upper < CLAMP {
                clamped.push(j);
            }
            -norm_quantile(upper.max(CLAMP))
        };
        values.push(e);
    }
    Ok(Residuals { values, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov's limiting survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        // the alternating series has not started to converge; Q is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let a = -2.0 * lambda * lambda;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (a * kf * kf).exp();
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against the continuous CDF `cdf`.
///
/// The p-value uses the asymptotic law with the small-sample correction
/// `λ = (√n + 0.12 + 0.11/√n) D`.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return domain("KS test needs a non-empty sample");
    }
    if sample.iter().any(|x| x.is_nan()) {
        return domain("KS test sample contains NaN");
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
        n: xs.len(),
    })
}

/// KS test of residuals against the standard normal law; needs at least 10 points.
pub fn ks_test_normal(residuals: &[f64]) -> Result<KsResult> {
    if residuals.len() < 10 {
        return domain(format!(
            "KS test needs at least 10 residuals (got {})",
            residuals.len()
        ));
    }
    ks_test(residuals, norm_cdf)
}
