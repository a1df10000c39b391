//! Maximum likelihood for the CIR interest process.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::params::CirParams;
use crate::special::ln_ncx2_pdf;

/// Shortest series accepted by [`fit_cir_mle`].
pub const MIN_CIR_SERIES: usize = 30;

/// Reparameterized transition quantities of the CIR law over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionInternals {
    pub c: f64,
    pub q: f64,
    pub u: f64,
    pub p: f64,
}

impl TransitionInternals {
    pub fn new(y_next: f64, y_prev: f64, cir: &CirParams, delta: f64) -> Self {
        let s2 = cir.sigma_i * cir.sigma_i;
        let c = 2.0 * cir.a / (s2 * (-(-cir.a * delta).exp_m1()));
        TransitionInternals {
            c,
            q: 2.0 * cir.a * cir.b / s2 - 1.0,
            u: c * y_prev * (-cir.a * delta).exp(),
            p: 2.0 * c * y_next,
        }
    }
}

/// Log transition density of the CIR process: `ln(2c) + ln f_χ²(p | 2(q+1), 2u)`.
pub fn cir_logdensity(y_next: f64, y_prev: f64, cir: &CirParams, delta: f64) -> Result<f64> {
    if !(y_next > 0.0) || !(y_prev > 0.0) || !(delta > 0.0) {
        return domain(format!(
            "cir_logdensity needs positive inputs (y_next={y_next}, y_prev={y_prev}, delta={delta})"
        ));
    }
    if !(cir.a > 0.0) || !(cir.sigma_i > 0.0) {
        return domain(format!("a and sigma_I must be positive ({cir:?})"));
    }
    let t = TransitionInternals::new(y_next, y_prev, cir, delta);
    if !(t.q + 1.0 > 0.0) {
        return domain(format!("q + 1 = {} must be positive", t.q + 1.0));
    }
    Ok((2.0 * t.c).ln() + ln_ncx2_pdf(t.p, 2.0 * (t.q + 1.0), 2.0 * t.u))
}

/// Markov log-likelihood `Σ ln f(y_{j+1} | y_j)` of a CIR series.
///
/// Returns `-inf` rather than an error when a term underflows.
pub fn cir_loglik(series: &[f64], cir: &CirParams, delta: f64) -> Result<f64> {
    if series.len() < 2 {
        return domain("cir_loglik needs at least two observations");
    }
    if let Some((i, v)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return domain(format!("observation {i} is not positive ({v})"));
    }
    if !(cir.a > 0.0) || !(cir.sigma_i > 0.0) || !(delta > 0.0) {
        return domain(format!("invalid CIR parameters {cir:?} or step {delta}"));
    }
    let s2 = cir.sigma_i * cir.sigma_i;
    let decay = (-cir.a * delta).exp();
    let c = 2.0 * cir.a / (s2 * (-(-cir.a * delta).exp_m1()));
    let q = 2.0 * cir.a * cir.b / s2 - 1.0;
    if !(q + 1.0 > 0.0) {
        return domain(format!("q + 1 = {} must be positive", q + 1.0));
    }
    let df = 2.0 * (q + 1.0);
    let ln_2c = (2.0 * c).ln();
    let mut total = 0.0;
    for w in series.windows(2) {
        let term = ln_2c + ln_ncx2_pdf(2.0 * c * w[1], df, 2.0 * c * w[0] * decay);
        if term.is_nan() {
            return Err(Error::Numerical(format!(
                "NaN log-density at ({}, {}) for {cir:?}",
                w[0], w[1]
            )));
        }
        total += term;
    }
    Ok(total)
}

/// Result of a CIR maximum likelihood fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirFit {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CirFit {
    pub fn params(&self) -> CirParams {
        CirParams::new(self.a, self.b, self.sigma_i)
    }
}

/// Starting point from weighted least squares on `y_{j+1} - y_j ≈ aΔ(b - y_j) + σ√(y_j Δ) ε`.
pub fn cir_initial_guess(series: &[f64], delta: f64) -> CirParams {
    let n = (series.len() - 1) as f64;
    // regress dy/sqrt(y) on (1/sqrt(y), sqrt(y)) so the noise is homoscedastic
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for w in series.windows(2) {
        let sq = w[0].sqrt();
        let (x1, x2) = (1.0 / sq, sq);
        let yv = (w[1] - w[0]) / sq;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        t1 += x1 * yv;
        t2 += x2 * yv;
    }
    let det = s11 * s22 - s12 * s12;
    let (alpha, beta) = if det.abs() > 0.0 {
        ((s22 * t1 - s12 * t2) / det, (s11 * t2 - s12 * t1) / det)
    } else {
        (0.0, 0.0)
    };
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let mut a = -beta / delta;
    let span = n * delta;
    if !(a > 0.0) || !a.is_finite() {
        a = 1.0 / span;
    }
    let mut b = alpha / (a * delta);
    if !(b > 0.0) || !b.is_finite() {
        b = mean;
    }
    let mut rss = 0.0;
    for w in series.windows(2) {
        let sq = w[0].sqrt();
        let resid = (w[1] - w[0]) / sq - (alpha / sq + beta * sq);
        rss += resid * resid;
    }
    let mut sigma = (rss / n / delta).sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        sigma = 0.1 * mean.sqrt();
    }
    // start inside the Feller region
    let cap = (2.0 * a * b).sqrt();
    if sigma >= cap {
        sigma = 0.9 * cap;
    }
    CirParams::new(a, b, sigma)
}

/// Maximizes the CIR log-likelihood over `a, b, σ_I > 0` subject to `2ab ≥ σ_I²`.
///
/// Searches over log-parameters with a Nelder–Mead simplex; the Feller
/// constraint enters as a penalty. Non-convergence is reported through
/// [`CirFit::converged`] with the best point found.
pub fn fit_cir_mle(series: &[f64], delta: f64, init: Option<CirParams>) -> Result<CirFit> {
    if series.len() < MIN_CIR_SERIES {
        return domain(format!(
            "CIR fit needs at least {MIN_CIR_SERIES} observations (got {})",
            series.len()
        ));
    }
    if let Some((i, v)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return domain(format!("observation {i} is not positive ({v})"));
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    let start = init.unwrap_or_else(|| cir_initial_guess(series, delta));
    let objective = |x: &[f64]| {
        let cir = CirParams::new(x[0].exp(), x[1].exp(), x[2].exp());
        let ratio = cir.feller_ratio();
        let penalty = if ratio < 1.0 {
            1e6 * (1.0 - ratio)
        } else {
            0.0
        };
        match cir_loglik(series, &cir, delta) {
            Ok(ll) if ll.is_finite() => -ll + penalty,
            _ => f64::INFINITY,
        }
    };
    let x0 = [start.a.ln(), start.b.ln(), start.sigma_i.ln()];
    let opts = NelderMeadOptions {
        f_tol: 1e-11,
        x_tol: 1e-6,
        max_evals: 4000,
        restarts: 3,
    };
    let m = nelder_mead(objective, &x0, &[0.3, 0.05, 0.2], &opts);
    let cir = CirParams::new(m.x[0].exp(), m.x[1].exp(), m.x[2].exp());
    let loglik = cir_loglik(series, &cir, delta).unwrap_or(f64::NEG_INFINITY);
    Ok(CirFit {
        a: cir.a,
        b: cir.b,
        sigma_i: cir.sigma_i,
        loglik,
        converged: m.converged && loglik.is_finite(),
        iterations: m.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate_cir;

    fn reference() -> CirParams {
        CirParams::new(30.0, 15.0, 0.6)
    }

    /// Adaptive Simpson quadrature, independent of the density code.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 30)
    }

    #[test]
    fn density_integrates_to_one_and_has_cir_mean() {
        for (cir, y, delta) in [
            (reference(), 14.0, 1.0 / 360.0),
            (CirParams::new(2.0, 1.0, 0.8), 0.7, 0.25),
            (CirParams::new(0.5, 0.04, 0.2), 0.05, 1.0 / 12.0),
        ] {
            let mean = cir.conditional_mean(y, delta);
            let sd = cir.conditional_variance(y, delta).sqrt();
            let lo = (mean - 15.0 * sd).max(1e-12);
            let hi = mean + 25.0 * sd;
            let f = |x: f64| cir_logdensity(x, y, &cir, delta).unwrap().exp();
            let mass = adaptive_simpson(&f, lo, hi, 1e-10);
            assert!((mass - 1.0).abs() < 1e-6, "{cir:?}: mass {mass}");
            let first = adaptive_simpson(&|x: f64| x * f(x), lo, hi, 1e-10 * mean);
            assert!(
                (first / mean - 1.0).abs() < 1e-6,
                "{cir:?}: mean {first} vs {mean}"
            );
        }
    }

    #[test]
    fn mode_is_near_previous_value() {
        let cir = reference();
        let delta = 1.0 / 360.0;
        let grid: Vec<f64> = (0..4001).map(|i| 13.5 + i as f64 * 0.00025).collect();
        let mode = grid
            .iter()
            .copied()
            .max_by(|a, b| {
                cir_logdensity(*a, 14.0, &cir, delta)
                    .unwrap()
                    .total_cmp(&cir_logdensity(*b, 14.0, &cir, delta).unwrap())
            })
            .unwrap();
        // one day of mean reversion moves the centre by (b - y)(1 - e^{-aΔ}) ≈ 0.08
        assert!((mode - 14.08).abs() < 0.01, "{mode}");
    }

    #[test]
    fn q_plus_one_nonpositive_is_domain_error() {
        let bad = CirParams::new(1.0, -1.0, 1.0);
        assert!(matches!(
            cir_logdensity(1.0, 1.0, &bad, 0.1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn two_points_is_one_term() {
        let cir = reference();
        let d = 1.0 / 360.0;
        let ll = cir_loglik(&[14.0, 14.2], &cir, d).unwrap();
        assert_eq!(ll, cir_logdensity(14.2, 14.0, &cir, d).unwrap());
    }

    #[test]
    fn reversal_changes_likelihood() {
        let cir = reference();
        let d = 1.0 / 360.0;
        let up: Vec<f64> = (0..10).map(|i| 14.0 + 0.05 * i as f64).collect();
        let down: Vec<f64> = up.iter().rev().copied().collect();
        let a = cir_loglik(&up, &cir, d).unwrap();
        let b = cir_loglik(&down, &cir, d).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn nonpositive_observation_rejected() {
        assert!(cir_loglik(&[1.0, 0.0, 1.0], &reference(), 0.1).is_err());
    }

    #[test]
    fn truth_beats_doubled_speed_on_average() {
        let cir = reference();
        let wrong = CirParams::new(60.0, 15.0, 0.6);
        let d = 1.0 / 360.0;
        let mut wins = 0;
        let mut diff = 0.0;
        for seed in 0..100 {
            let path = simulate_cir(&cir, 14.0, 360, d, seed).unwrap();
            let lt = cir_loglik(&path, &cir, d).unwrap();
            let lw = cir_loglik(&path, &wrong, d).unwrap();
            diff += lt - lw;
            if lt > lw {
                wins += 1;
            }
        }
        assert!(diff > 0.0 && wins > 50, "wins {wins}, diff {diff}");
    }

    #[test]
    fn fit_recovers_reference_process() {
        let cir = reference();
        let d = 1.0 / 360.0;
        let path = simulate_cir(&cir, 14.0, 720, d, 2024).unwrap();
        let fit = fit_cir_mle(&path, d, None).unwrap();
        assert!(fit.converged);
        assert!((fit.b - 15.0).abs() < 0.3, "{fit:?}");
        assert!((fit.sigma_i - 0.6).abs() < 0.06, "{fit:?}");
        assert!(fit.a > 5.0 && fit.a < 100.0, "{fit:?}");
    }

    #[test]
    fn init_at_truth_agrees_with_default_start() {
        let cir = reference();
        let d = 1.0 / 360.0;
        for seed in [1, 2, 3] {
            let path = simulate_cir(&cir, 14.0, 720, d, seed).unwrap();
            let a = fit_cir_mle(&path, d, None).unwrap();
            let b = fit_cir_mle(&path, d, Some(cir)).unwrap();
            for (x, y) in [(a.a, b.a), (a.b, b.b), (a.sigma_i, b.sigma_i)] {
                assert!((x / y - 1.0).abs() < 1e-4, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let cir = CirParams::new(3.0, 2.0, 0.7);
        let d = 1.0 / 52.0;
        let path = simulate_cir(&cir, 2.0, 400, d, 77).unwrap();
        let c = 3.5;
        let scaled: Vec<f64> = path.iter().map(|y| c * y).collect();
        let f1 = fit_cir_mle(&path, d, None).unwrap();
        let f2 = fit_cir_mle(&scaled, d, None).unwrap();
        assert!((f2.a / f1.a - 1.0).abs() < 1e-4, "{f1:?} {f2:?}");
        assert!((f2.b / (c * f1.b) - 1.0).abs() < 1e-4, "{f1:?} {f2:?}");
        assert!(
            (f2.sigma_i / (c.sqrt() * f1.sigma_i) - 1.0).abs() < 1e-4,
            "{f1:?} {f2:?}"
        );
    }

    #[test]
    fn nearly_constant_series() {
        // tiny jitter around b: σ_I → 0 regime, the level must still be found
        let series: Vec<f64> = (0..200)
            .map(|i| 5.0 + 1e-4 * ((i * 7919 % 13) as f64 - 6.0))
            .collect();
        let fit = fit_cir_mle(&series, 1.0 / 365.0, None).unwrap();
        assert!((fit.b - 5.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn short_series_rejected() {
        let s = vec![1.0; 10];
        assert!(matches!(fit_cir_mle(&s, 0.1, None), Err(Error::Domain(_))));
    }
}
