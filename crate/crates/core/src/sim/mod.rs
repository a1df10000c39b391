//! Exact-transition simulation of the interest process and the delayed price.
//!
//! The interest process is advanced with draws from its noncentral
//! chi-squared transition law. Given the interest path, log-price increments
//! are conditionally normal with variance `σ_P² J`, where `J` is the
//! trapezoid of the delayed interest over the step.

mod experiment;

pub use experiment::{
    quantile, run_experiment, ExperimentConfig, ExperimentSummary, Failure, ReplicationEstimate,
    SummaryRow, PARAMETERS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::params::{validate_params, CirParams, InterestHistory, ModelParams, RNParams};

/// Discrete realization of the interest and log-price processes on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPair {
    pub delta: f64,
    /// `I_{-M}, ..., I_N`; the first `M + 1` points come from the history.
    pub interest: Vec<f64>,
    /// `X_0, ..., X_N`.
    pub log_price: Vec<f64>,
}

impl PathPair {
    /// Number of leading history points `M`.
    pub fn history_len(&self) -> usize {
        self.interest.len() - self.log_price.len()
    }

    /// Interest at an arbitrary time in `[-MΔ, NΔ]`, linear between grid points.
    pub fn interest_at(&self, t: f64) -> f64 {
        grid_value(&self.interest, self.history_len(), self.delta, t)
    }
}

fn grid_value(path: &[f64], offset: usize, delta: f64, t: f64) -> f64 {
    let pos = t / delta + offset as f64;
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return path[nearest as usize];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    path[i] + frac * (path[i + 1] - path[i])
}

/// Independent RNG streams for the interest and price noise.
pub(crate) fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut interest = ChaCha8Rng::seed_from_u64(seed);
    let mut price = ChaCha8Rng::seed_from_u64(seed);
    interest.set_stream(0);
    price.set_stream(1);
    (interest, price)
}

/// One exact CIR transition over `dt` from `y`.
///
/// Samples `χ²(df = 4ab/σ², ncp = 2c·y·e^{-a·dt}) / (2c)` with
/// `c = 2a / (σ²(1 - e^{-a·dt}))`, using the Poisson mixture of central
/// chi-squared laws.
pub fn cir_step<R: Rng + ?Sized>(y: f64, cir: &CirParams, dt: f64, rng: &mut R) -> Result<f64> {
    if !(y > 0.0) || !(dt > 0.0) {
        return domain(format!(
            "cir_step needs y > 0 and dt > 0 (got y={y}, dt={dt})"
        ));
    }
    let s2 = cir.sigma_i * cir.sigma_i;
    let decay = (-cir.a * dt).exp();
    let c = 2.0 * cir.a / (s2 * (-(-cir.a * dt).exp_m1()));
    let df = 4.0 * cir.a * cir.b / s2;
    let ncp = 2.0 * c * y * decay;
    let mixing = if ncp > 0.0 {
        let poisson = Poisson::new(0.5 * ncp)
            .map_err(|e| Error::Numerical(format!("poisson({}) : {e}", 0.5 * ncp)))?;
        poisson.sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * df + mixing;
    let gamma =
        Gamma::new(shape, 2.0).map_err(|e| Error::Numerical(format!("gamma({shape}): {e}")))?;
    let next = gamma.sample(rng) / (2.0 * c);
    if !next.is_finite() {
        return Err(Error::Numerical(format!("non-finite CIR draw from y={y}")));
    }
    if next <= 0.0 {
        return Err(Error::Numerical(format!(
            "non-positive CIR draw from y={y}"
        )));
    }
    Ok(next)
}

/// Drift specification of the log price.
#[derive(Debug, Clone, Copy)]
enum Drift {
    /// Constant drift `μ`.
    RealWorld(f64),
    /// `r - σ_P² I_{t-τ} / 2`, so that the discounted price is a martingale.
    RiskNeutral(f64),
}

/// Simulates interest and log price under the real-world measure.
///
/// The interest path starts from `φ_I(0)`; the history is sampled at the grid
/// points `-MΔ, ..., 0` with `M = ⌈L/Δ⌉`. Deterministic given `seed`.
pub fn simulate_pair(
    p: &ModelParams,
    h: &InterestHistory,
    x0: f64,
    n_steps: usize,
    delta: f64,
    seed: u64,
) -> Result<PathPair> {
    simulate(
        p,
        &CirParams::from(p),
        h,
        x0,
        n_steps,
        delta,
        seed,
        Drift::RealWorld(p.mu),
    )
}

/// Simulates under the risk-neutral measure: interest with `(ã, b̃)` and
/// log-price drift `r - σ_P² I_{t-τ}/2`.
pub fn simulate_pair_risk_neutral(
    p: &ModelParams,
    rn: &RNParams,
    h: &InterestHistory,
    x0: f64,
    n_steps: usize,
    delta: f64,
    seed: u64,
) -> Result<PathPair> {
    let cir = CirParams::new(rn.a_tilde, rn.b_tilde, p.sigma_i);
    simulate(
        p,
        &cir,
        h,
        x0,
        n_steps,
        delta,
        seed,
        Drift::RiskNeutral(p.r),
    )
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    p: &ModelParams,
    cir: &CirParams,
    h: &InterestHistory,
    x0: f64,
    n_steps: usize,
    delta: f64,
    seed: u64,
    drift: Drift,
) -> Result<PathPair> {
    let violations = validate_params(p, h);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return domain(msg.join("; "));
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    // the grid reaches back to the first multiple of delta at or before -L;
    // a leading point outside the window holds the earliest history value
    let m = (h.length() / delta - 1e-9).ceil().max(0.0) as usize;
    let mut interest = Vec::with_capacity(m + n_steps + 1);
    for i in 0..=m {
        let t = -((m - i) as f64) * delta;
        interest.push(h.eval(t.max(-h.length()))?);
    }
    let (mut irng, mut prng) = streams(seed);
    let mut y = h.current();
    for _ in 0..n_steps {
        y = cir_step(y, cir, delta, &mut irng)?;
        interest.push(y);
    }

    let log_price = price_path(p, &interest, m, x0, delta, drift, &mut prng);
    Ok(PathPair {
        delta,
        interest,
        log_price,
    })
}

fn price_path<R: Rng + ?Sized>(
    p: &ModelParams,
    interest: &[f64],
    m: usize,
    x0: f64,
    delta: f64,
    drift: Drift,
    rng: &mut R,
) -> Vec<f64> {
    let n_steps = interest.len() - m - 1;
    let mut log_price = Vec::with_capacity(n_steps + 1);
    log_price.push(x0);
    let mut x = x0;
    let mut prev_lag = grid_value(interest, m, delta, -p.tau);
    for j in 1..=n_steps {
        let lag = grid_value(interest, m, delta, j as f64 * delta - p.tau);
        let jint = 0.5 * delta * (prev_lag + lag);
        let var = p.sigma_p * p.sigma_p * jint;
        let mean = match drift {
            Drift::RealWorld(mu) => mu * delta,
            Drift::RiskNeutral(r) => r * delta - 0.5 * var,
        };
        let z: f64 = StandardNormal.sample(rng);
        x += mean + var.sqrt() * z;
        log_price.push(x);
        prev_lag = lag;
    }
    log_price
}

/// Real-world log-price path on a given interest path `I_{-M}, ..., I_N`.
///
/// Uses only the price stream of `seed`, so different seeds give
/// conditionally independent price paths on the same interest path.
pub fn simulate_log_price(
    p: &ModelParams,
    interest: &[f64],
    history_len: usize,
    x0: f64,
    delta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if interest.len() <= history_len {
        return domain("interest path has no points after the history");
    }
    if !(delta > 0.0) {
        return domain(format!("grid step must be positive (got {delta})"));
    }
    if (history_len as f64) * delta < p.tau * (1.0 - 1e-12) {
        return domain(format!(
            "history of {history_len} steps does not cover tau = {}",
            p.tau
        ));
    }
    if let Some(v) = interest.iter().find(|v| !(**v > 0.0)) {
        return domain(format!("interest values must be positive (got {v})"));
    }
    let (_, mut prng) = streams(seed);
    Ok(price_path(
        p,
        interest,
        history_len,
        x0,
        delta,
        Drift::RealWorld(p.mu),
        &mut prng,
    ))
}

/// Simulates only the interest path `I_Δ, ..., I_{nΔ}` from `y0`.
pub fn simulate_cir(
    cir: &CirParams,
    y0: f64,
    n_steps: usize,
    delta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let (mut rng, _) = streams(seed);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(y0);
    let mut y = y0;
    for _ in 0..n_steps {
        y = cir_step(y, cir, delta, &mut rng)?;
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (ModelParams, InterestHistory) {
        (
            ModelParams::reference(),
            InterestHistory::constant(14.0, 0.05).unwrap(),
        )
    }

    #[test]
    fn conditional_mean_three_sigma() {
        let cir = CirParams::new(30.0, 15.0, 0.6);
        let (y, dt) = (14.0, 1.0 / 360.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| cir_step(y, &cir, dt, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = cir.conditional_variance(y, dt).sqrt();
        assert!(
            (mean - cir.conditional_mean(y, dt)).abs() < 3.0 * sd / (n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn conditional_variance_matches() {
        let cir = CirParams::new(2.0, 1.0, 0.8);
        let (y, dt) = (0.7, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = cir_step(y, &cir, dt, &mut rng).unwrap();
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let expected = cir.conditional_variance(y, dt);
        // sampling sd of the variance estimator is about var*sqrt(2/n) for near-normal draws;
        // the law is skewed, so allow a wider band
        assert!(
            (var - expected).abs() < 0.01 * expected,
            "{var} vs {expected}"
        );
    }

    #[test]
    fn long_step_reaches_stationary_gamma() {
        use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
        let cir = CirParams::new(1.5, 2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 5000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| cir_step(0.3, &cir, 30.0, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let shape = 2.0 * cir.a * cir.b / (cir.sigma_i * cir.sigma_i);
        let rate = 2.0 * cir.a / (cir.sigma_i * cir.sigma_i);
        let law = GammaDist::new(shape, rate).unwrap();
        let ks = crate::estimate::ks_test(&draws, |x| law.cdf(x)).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn zero_price_volatility_gives_linear_drift() {
        let (mut p, h) = reference();
        p.sigma_p = 1e-300;
        p.mu = 0.3;
        let delta = 1.0 / 360.0;
        let path = simulate_pair(&p, &h, 2.0, 50, delta, 1).unwrap();
        for (j, x) in path.log_price.iter().enumerate() {
            assert!((x - (2.0 + 0.3 * j as f64 * delta)).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let (p, h) = reference();
        let a = simulate_pair(&p, &h, 0.0, 100, 1.0 / 360.0, 42).unwrap();
        let b = simulate_pair(&p, &h, 0.0, 100, 1.0 / 360.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_pair(&p, &h, 0.0, 100, 1.0 / 360.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn history_points_lead_the_path() {
        let (p, h) = reference();
        let path = simulate_pair(&p, &h, 0.0, 10, 1.0 / 360.0, 3).unwrap();
        assert_eq!(path.history_len(), 18);
        assert!(path.interest[..=18].iter().all(|&v| v == 14.0));
        assert!(path.interest.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn black_scholes_reduction_with_constant_interest() {
        // tau = 0 and an interest process pinned at its mean by tiny vol of vol
        let p = ModelParams {
            a: 50.0,
            b: 4.0,
            sigma_i: 1e-4,
            mu: 0.1,
            sigma_p: 0.25,
            tau: 0.0,
            r: 0.0,
        };
        let h = InterestHistory::constant(4.0, 0.0).unwrap();
        let delta = 1.0 / 365.0;
        let path = simulate_pair(&p, &h, 0.0, 20_000, delta, 8).unwrap();
        let inc: Vec<f64> = path.log_price.windows(2).map(|w| w[1] - w[0]).collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected_var = 0.25 * 0.25 * 4.0 * delta;
        assert!((mean - 0.1 * delta).abs() < 4.0 * (expected_var / n).sqrt());
        assert!((var / expected_var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn invalid_params_rejected() {
        let (mut p, h) = reference();
        p.tau = 0.2;
        assert!(matches!(
            simulate_pair(&p, &h, 0.0, 10, 1.0 / 360.0, 1),
            Err(Error::Domain(_))
        ));
    }
}
