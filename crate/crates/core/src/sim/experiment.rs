//! Replication driver: simulate, re-estimate, aggregate.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate_pair;
use crate::error::{domain, Error, Result};
use crate::estimate::{fit_cir_mle, select_lag};
use crate::params::{validate_params, InterestHistory, ModelParams, SeriesPair};

/// Names of the summarized estimators, in output order.
pub const PARAMETERS: [&str; 6] = ["a", "b", "sigma_I", "mu", "sigma_P", "tau"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub history: InterestHistory,
    pub delta: f64,
    pub x0: f64,
    /// Horizons in years; each must be a multiple of `delta`.
    pub horizons: Vec<f64>,
    pub replications: usize,
    /// Replication `r` is simulated with seed `seed ^ r`.
    pub seed: u64,
}

impl ExperimentConfig {
    /// The reference setting: `φ_I ≡ 14` on `[-0.05, 0]`, `Δ = 1/360`, `P_0 = 20000`.
    pub fn reference(horizons: Vec<f64>, replications: usize, seed: u64) -> Self {
        ExperimentConfig {
            params: ModelParams::reference(),
            history: InterestHistory::constant(14.0, 0.05).expect("valid constant history"),
            delta: 1.0 / 360.0,
            x0: 20000f64.ln(),
            horizons,
            replications,
            seed,
        }
    }
}

/// Estimates from one replication at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEstimate {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    pub mu: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    pub tau: f64,
    pub lag: usize,
}

impl ReplicationEstimate {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "a" => self.a,
            "b" => self.b,
            "sigma_I" => self.sigma_i,
            "mu" => self.mu,
            "sigma_P" => self.sigma_p,
            "tau" => self.tau,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub horizon: f64,
    pub parameter: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replication: usize,
    pub horizon: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    /// Per horizon, the number of replications selecting each lag `0..=M`.
    pub lag_counts: Vec<(f64, Vec<usize>)>,
    pub failures: Vec<Failure>,
    /// Raw estimates, indexed `[horizon][replication]`; failed fits are `None`.
    #[serde(skip)]
    pub estimates: Vec<Vec<Option<ReplicationEstimate>>>,
}

impl ExperimentSummary {
    pub fn row(&self, horizon: f64, parameter: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.parameter == parameter && (r.horizon - horizon).abs() < 1e-12)
    }

    /// Most frequently selected lag at `horizon` (smallest on ties).
    pub fn modal_lag(&self, horizon: f64) -> Option<usize> {
        let (_, counts) = self
            .lag_counts
            .iter()
            .find(|(h, _)| (h - horizon).abs() < 1e-12)?;
        let max = *counts.iter().max()?;
        counts.iter().position(|&c| c == max)
    }

    /// Writes `horizon,parameter,count,mean,std,q1,median,q3`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io {
                file: "<summary>".into(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::Io {
            file: "<summary>".into(),
            message: e.to_string(),
        })
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n-1)p`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn estimate_one(path: &super::PathPair, m: usize, n: usize) -> Result<ReplicationEstimate> {
    let series = SeriesPair::new(
        path.delta,
        path.log_price[..=n].to_vec(),
        path.interest[..=m + n].to_vec(),
    )?;
    let cir = fit_cir_mle(series.interest_path(), series.delta, None)?;
    if !cir.converged {
        return Err(Error::Numerical(format!(
            "CIR fit did not converge after {} iterations",
            cir.iterations
        )));
    }
    let price = select_lag(&series)?;
    Ok(ReplicationEstimate {
        a: cir.a,
        b: cir.b,
        sigma_i: cir.sigma_i,
        mu: price.mu,
        sigma_p: price.sigma_p,
        tau: price.tau,
        lag: price.lag,
    })
}

/// Runs the simulation-estimation experiment.
///
/// Each replication simulates once up to the longest horizon; shorter
/// horizons use the leading part of that path. Failed fits are recorded in
/// [`ExperimentSummary::failures`] and left out of the statistics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let p = &config.params;
    let violations = validate_params(p, &config.history);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return domain(msg.join("; "));
    }
    if config.horizons.is_empty() {
        return domain("experiment needs at least one horizon");
    }
    if !(config.delta > 0.0) {
        return domain(format!("grid step must be positive (got {})", config.delta));
    }
    let steps: Vec<usize> = config
        .horizons
        .iter()
        .map(|&h| {
            let k = (h / config.delta).round();
            if !(h > 0.0) || (k * config.delta - h).abs() > 1e-9 * h.max(1.0) {
                domain(format!("horizon {h} is not a positive multiple of delta"))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let lag_steps = p.tau / config.delta;
    if (lag_steps - lag_steps.round()).abs() > 1e-9 {
        return domain(format!("tau = {} is not a multiple of delta", p.tau));
    }
    let n_max = *steps.iter().max().unwrap();
    let m = (config.history.length() / config.delta + 1e-9).floor() as usize;

    let per_rep: Vec<Vec<std::result::Result<ReplicationEstimate, String>>> = (0..config
        .replications)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed ^ r as u64;
            match simulate_pair(p, &config.history, config.x0, n_max, config.delta, seed) {
                Ok(path) => steps
                    .iter()
                    .map(|&n| estimate_one(&path, m, n).map_err(|e| e.to_string()))
                    .collect(),
                Err(e) => vec![Err(format!("simulation failed: {e}")); steps.len()],
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut lag_counts = Vec::new();
    let mut failures = Vec::new();
    let mut estimates = Vec::new();
    for (hi, &horizon) in config.horizons.iter().enumerate() {
        let mut ok = Vec::new();
        for (r, rep) in per_rep.iter().enumerate() {
            match &rep[hi] {
                Ok(e) => ok.push(Some(*e)),
                Err(reason) => {
                    log::warn!("replication {r} at horizon {horizon}: {reason}");
                    failures.push(Failure {
                        replication: r,
                        horizon,
                        reason: reason.clone(),
                    });
                    ok.push(None);
                }
            }
        }
        let good: Vec<ReplicationEstimate> = ok.iter().flatten().copied().collect();
        for name in PARAMETERS {
            let mut v: Vec<f64> = good.iter().map(|e| e.get(name).unwrap()).collect();
            rows.push(summarize(horizon, name, &mut v));
        }
        let mut counts = vec![0; m + 1];
        for e in &good {
            counts[e.lag] += 1;
        }
        lag_counts.push((horizon, counts));
        estimates.push(ok);
    }
    Ok(ExperimentSummary {
        rows,
        lag_counts,
        failures,
        estimates,
    })
}

fn summarize(horizon: f64, name: &str, v: &mut [f64]) -> SummaryRow {
    let count = v.len();
    if count == 0 {
        return SummaryRow {
            horizon,
            parameter: name.to_string(),
            count,
            mean: f64::NAN,
            std: f64::NAN,
            q1: f64::NAN,
            median: f64::NAN,
            q3: f64::NAN,
        };
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        horizon,
        parameter: name.to_string(),
        count,
        mean,
        std,
        q1: quantile(v, 0.25),
        median: quantile(v, 0.5),
        q3: quantile(v, 0.75),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn single_replication_is_deterministic() {
        let cfg = ExperimentConfig::reference(vec![0.25], 1, 99);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let text = String::from_utf8(buf_a).unwrap();
        assert!(text.starts_with("horizon,parameter,count,mean,std,q1,median,q3\n"));
    }

    #[test]
    fn counts_add_up() {
        let cfg = ExperimentConfig::reference(vec![0.1, 0.2], 6, 3);
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.rows.len(), 12);
        for (h, counts) in &s.lag_counts {
            let fails = s.failures.iter().filter(|f| f.horizon == *h).count();
            assert_eq!(counts.iter().sum::<usize>() + fails, 6);
            assert_eq!(s.row(*h, "tau").unwrap().count, 6 - fails);
            assert_eq!(counts.len(), 19);
        }
    }

    #[test]
    fn off_grid_horizon_rejected() {
        let cfg = ExperimentConfig::reference(vec![0.1234], 1, 0);
        assert!(run_experiment(&cfg).is_err());
    }
}
