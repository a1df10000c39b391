//! `attn-sv`: simulate, estimate, test, price and calibrate the delayed
//! attention-driven stochastic volatility model from the command line.
//!
//! Exit codes: 0 success, 1 domain or data error, 2 usage error.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attention_sv::calibrate::{calibrate_rn, filter_quotes, model_prices, rmse};
use attention_sv::dataio::{
    load_prices, load_proxy, load_quotes, load_rn, load_series, parse_date, FitSummary, ParamsFile,
};
use attention_sv::estimate::{fit_cir_mle, generalized_residuals, ks_test_normal, select_lag};
use attention_sv::params::{InterestHistory, ModelParams, RNParams};
use attention_sv::pricer::{
    fit_bs_sigma, price_black_scholes, price_call_fourier, price_lognormal, price_mc_batch,
    price_put, FourierGrid, McOption, McSettings, PriceResult, Quadrature,
};
use attention_sv::riskneutral::CharFnContext;
use attention_sv::sim::{
    run_experiment, simulate_pair, simulate_pair_risk_neutral, ExperimentConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Environment variable that overrides `--seed` when set.
pub const SEED_ENV: &str = "ATTN_PRICER_SEED";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(attention_sv::Error),
}

impl From<attention_sv::Error> for CliError {
    fn from(e: attention_sv::Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Run(attention_sv::Error::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses a number written as a decimal or as a fraction such as `1/365`.
pub fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n
                .trim()
                .parse()
                .map_err(|_| format!("bad numerator in {s:?}"))?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|_| format!("bad denominator in {s:?}"))?;
            if d == 0.0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            n / d
        }
        None => s
            .trim()
            .parse()
            .map_err(|_| format!("{s:?} is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "attn-sv",
    version,
    about = "Delayed attention-driven stochastic volatility model"
)]
struct Cli {
    /// Worker threads for parallel stages [count]; defaults to the available parallelism
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate interest and log-price paths from a parameter file
    Simulate(SimulateArgs),
    /// Fit the interest and price processes to daily CSV data
    Estimate(EstimateArgs),
    /// Kolmogorov-Smirnov test on generalized residuals of the interest fit
    Gof(GofArgs),
    /// Price European options
    Price(PriceArgs),
    /// Calibrate the risk-neutral interest parameters to option quotes
    Calibrate(CalibrateArgs),
    /// Repeated simulation and re-estimation of known parameters
    Experiment(ExperimentArgs),
    /// RMSE of the model relative to Black-Scholes on the same quotes
    CompareBs(CompareBsArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Parameters including the interest history [JSON]
    #[arg(long)]
    params: PathBuf,
    /// Risk-neutral parameters; simulate under Q instead of P [JSON]
    #[arg(long)]
    rn: Option<PathBuf>,
    /// Number of grid steps [count]
    #[arg(long)]
    steps: usize,
    /// Grid step [years], e.g. 1/360
    #[arg(long, value_parser = parse_fraction)]
    delta: f64,
    /// Initial price [currency]
    #[arg(long, default_value = "1")]
    spot: f64,
    /// Random seed [integer]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Path table with columns step,time,interest,log_price [CSV]
    #[arg(long)]
    out: PathBuf,
    /// Also write `date,price` rows, one day per step [CSV]
    #[arg(long, requires = "proxy_out")]
    prices_out: Option<PathBuf>,
    /// Also write `date,value` interest rows, one day per step [CSV]
    #[arg(long, requires = "prices_out")]
    proxy_out: Option<PathBuf>,
    /// Date of the first history point for the dated files [YYYY-MM-DD]
    #[arg(long, default_value = "2000-01-01")]
    start_date: String,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Prices with header `date,price` [CSV]
    #[arg(long)]
    prices: PathBuf,
    /// Attention proxy with header `date,value` [CSV]
    #[arg(long)]
    proxy: PathBuf,
    /// Observation spacing [years], e.g. 1/365
    #[arg(long, value_parser = parse_fraction)]
    delta: f64,
    /// Largest candidate delay [grid steps]
    #[arg(long)]
    max_lag: usize,
    /// Risk-free rate stored with the fit [1/years]
    #[arg(long, default_value = "0")]
    rate: f64,
    /// Fit and parameter file [JSON]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GofArgs {
    /// Attention proxy with header `date,value` [CSV]
    #[arg(long)]
    proxy: PathBuf,
    /// Observation spacing [years]
    #[arg(long, value_parser = parse_fraction)]
    delta: f64,
    /// Take a, b, sigma_I from this parameter file instead of refitting [JSON]
    #[arg(long)]
    params: Option<PathBuf>,
    /// Test result [JSON]
    #[arg(long)]
    out: PathBuf,
    /// Residuals, one per transition [CSV]
    #[arg(long)]
    residuals_out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PriceMethod {
    Fourier,
    Lognormal,
    Mc,
    BlackScholes,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Carr-Madan damping exponent [dimensionless]
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    /// FFT length [count, power of two]
    #[arg(long, default_value_t = 4096)]
    fft_points: usize,
    /// Frequency spacing of the inversion grid [1/log-price]
    #[arg(long, default_value_t = 0.25)]
    eta: f64,
    /// Use Simpson weights in the inversion sum instead of the trapezoid rule
    #[arg(long)]
    simpson: bool,
}

impl GridArgs {
    fn grid(&self) -> FourierGrid {
        FourierGrid {
            alpha: self.alpha,
            n_points: self.fft_points,
            eta: self.eta,
            rule: if self.simpson {
                Quadrature::Simpson
            } else {
                Quadrature::Trapezoid
            },
        }
    }
}

#[derive(Args, Debug)]
struct PriceArgs {
    /// Parameters; fit output is accepted [JSON]
    #[arg(long)]
    params: PathBuf,
    /// Risk-neutral parameters; defaults to the uncalibrated measure [JSON]
    #[arg(long)]
    rn: Option<PathBuf>,
    /// Current price of the underlying [currency]
    #[arg(long)]
    spot: f64,
    /// Strike prices, comma separated [currency]
    #[arg(long, value_parser = parse_fraction, value_delimiter = ',', required = true)]
    strike: Vec<f64>,
    /// Time to expiry [years], e.g. 0.25 or 30/365
    #[arg(long, value_parser = parse_fraction)]
    expiry: f64,
    /// Pricing method [fourier, lognormal (expiry <= tau), mc, black-scholes (needs --sigma)]
    #[arg(long, value_enum, default_value = "fourier")]
    method: PriceMethod,
    /// Price puts instead of calls
    #[arg(long)]
    put: bool,
    /// Black-Scholes volatility [1/sqrt(years)]; required for black-scholes
    #[arg(long)]
    sigma: Option<f64>,
    /// Monte Carlo paths [count]
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Monte Carlo interest steps [1/years]
    #[arg(long, default_value_t = 720)]
    steps_per_year: usize,
    /// Monte Carlo seed [integer]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    /// Result [JSON]; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuoteArgs {
    /// Quotes with header `expiry_date,strike,is_call,bid_btc,ask_btc` [CSV]
    #[arg(long)]
    quotes: PathBuf,
    /// Valuation date [YYYY-MM-DD]
    #[arg(long)]
    valuation_date: String,
    /// Index level used as spot and to convert BTC premiums [currency]
    #[arg(long)]
    index_level: f64,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Parameters; fit output is accepted [JSON]
    #[arg(long)]
    params: PathBuf,
    #[command(flatten)]
    quotes: QuoteArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Calibration result [JSON]
    #[arg(long)]
    out: PathBuf,
    /// Per-quote table strike,expiry,is_call,bid,ask,mid,model_price [CSV]
    #[arg(long)]
    quotes_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Interest mean-reversion speed [1/years]
    #[arg(long)]
    a: f64,
    /// Interest long-run mean [proxy units]
    #[arg(long)]
    b: f64,
    /// Interest volatility [sqrt(proxy units)/sqrt(years)]
    #[arg(long)]
    sigma_i: f64,
    /// Log-price drift [1/years]
    #[arg(long)]
    mu: f64,
    /// Price volatility scale [1/sqrt(proxy units * years)]
    #[arg(long)]
    sigma_p: f64,
    /// Delay [years]; must be a multiple of --delta
    #[arg(long, value_parser = parse_fraction)]
    tau: f64,
    /// Grid step [years]
    #[arg(long, value_parser = parse_fraction)]
    delta: f64,
    /// Estimation horizons, comma separated [years]
    #[arg(long, value_parser = parse_fraction, value_delimiter = ',', required = true)]
    horizons: Vec<f64>,
    /// Replications [count]
    #[arg(long)]
    reps: usize,
    /// Base seed; replication r uses seed XOR r [integer]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constant interest history level [proxy units]
    #[arg(long, default_value_t = 14.0)]
    history_value: f64,
    /// Length of the interest history [years]
    #[arg(long, value_parser = parse_fraction, default_value = "0.05")]
    history_length: f64,
    /// Initial price [currency]
    #[arg(long, default_value_t = 20000.0)]
    spot: f64,
    /// Summary with columns horizon,parameter,count,mean,std,q1,median,q3 [CSV]
    #[arg(long)]
    out: PathBuf,
    /// Lag counts and failures [JSON]
    #[arg(long)]
    details_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareBsArgs {
    /// Parameters; fit output is accepted [JSON]
    #[arg(long)]
    params: PathBuf,
    /// Risk-neutral parameters, e.g. calibrate output; defaults to uncalibrated [JSON]
    #[arg(long)]
    rn: Option<PathBuf>,
    #[command(flatten)]
    quotes: QuoteArgs,
    /// Black-Scholes volatility [1/sqrt(years)]
    #[arg(long, conflicts_with = "prices")]
    sigma: Option<f64>,
    /// Prices with header `date,price` to fit the Black-Scholes volatility [CSV]
    #[arg(long, requires = "delta")]
    prices: Option<PathBuf>,
    /// Spacing of --prices [years]
    #[arg(long, value_parser = parse_fraction)]
    delta: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    /// Comparison [JSON]
    #[arg(long)]
    out: PathBuf,
}

/// Everything needed to reproduce a run; written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

struct Run {
    command: String,
    arguments: Vec<String>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn create(&mut self, path: &Path) -> CliResult<BufWriter<File>> {
        self.outputs.push(path.to_path_buf());
        let f = File::create(path).map_err(|e| io_error(path, e))?;
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut w = self.create(path)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_error(path, e))?;
        w.write_all(b"\n").map_err(|e| io_error(path, e))?;
        w.flush().map_err(|e| io_error(path, e))
    }

    fn finish(self) -> CliResult<()> {
        let Some(first) = self.outputs.first() else {
            return Ok(());
        };
        let mut name = first.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let mut versions = BTreeMap::new();
        versions.insert(
            "attention-sv".to_string(),
            attention_sv::VERSION.to_string(),
        );
        versions.insert("attn-sv".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            command: self.command,
            arguments: self.arguments,
            seed: self.seed,
            versions,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let f = File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| io_error(&path, e))?;
        w.write_all(b"\n").map_err(|e| io_error(&path, e))?;
        w.flush().map_err(|e| io_error(&path, e))
    }
}

fn effective_seed(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn load_params(path: &Path) -> CliResult<ParamsFile> {
    Ok(ParamsFile::load(path)?)
}

fn rn_or_default(path: Option<&PathBuf>, p: &ModelParams) -> CliResult<RNParams> {
    match path {
        Some(path) => Ok(load_rn(path)?),
        None => Ok(RNParams::uncalibrated(p)),
    }
}

fn simulate(args: SimulateArgs, run: &mut Run) -> CliResult<()> {
    let seed = effective_seed(args.seed)?;
    run.seed = Some(seed);
    let pf = load_params(&args.params)?;
    if !(args.spot > 0.0) {
        return Err(CliError::Usage(format!(
            "--spot must be positive (got {})",
            args.spot
        )));
    }
    let x0 = args.spot.ln();
    let path = match &args.rn {
        Some(rn) => {
            let rn = load_rn(rn)?;
            simulate_pair_risk_neutral(
                &pf.params,
                &rn,
                &pf.history,
                x0,
                args.steps,
                args.delta,
                seed,
            )?
        }
        None => simulate_pair(&pf.params, &pf.history, x0, args.steps, args.delta, seed)?,
    };
    let m = path.history_len();
    let mut w = csv::Writer::from_writer(run.create(&args.out)?);
    let err = |e: csv::Error| io_error(&args.out, e);
    w.write_record(["step", "time", "interest", "log_price"])
        .map_err(err)?;
    for (i, y) in path.interest.iter().enumerate() {
        let step = i as i64 - m as i64;
        let x = if step >= 0 {
            path.log_price[step as usize].to_string()
        } else {
            String::new()
        };
        w.write_record([
            step.to_string(),
            (step as f64 * args.delta).to_string(),
            y.to_string(),
            x,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| io_error(&args.out, e))?;
    drop(w);

    if let (Some(po), Some(vo)) = (&args.prices_out, &args.proxy_out) {
        let start = parse_date(&args.start_date).map_err(CliError::Usage)?;
        let mut dates = Vec::with_capacity(path.interest.len());
        let mut d = start;
        for _ in 0..path.interest.len() {
            dates.push(d);
            d = d
                .succ_opt()
                .ok_or_else(|| CliError::Usage("date range overflows the calendar".into()))?;
        }
        let mut pw = csv::Writer::from_writer(run.create(po)?);
        pw.write_record(["date", "price"])
            .map_err(|e| io_error(po, e))?;
        for (j, x) in path.log_price.iter().enumerate() {
            pw.write_record([dates[m + j].to_string(), x.exp().to_string()])
                .map_err(|e| io_error(po, e))?;
        }
        pw.flush().map_err(|e| io_error(po, e))?;
        let mut vw = csv::Writer::from_writer(run.create(vo)?);
        vw.write_record(["date", "value"])
            .map_err(|e| io_error(vo, e))?;
        for (d, y) in dates.iter().zip(&path.interest) {
            vw.write_record([d.to_string(), y.to_string()])
                .map_err(|e| io_error(vo, e))?;
        }
        vw.flush().map_err(|e| io_error(vo, e))?;
    }
    Ok(())
}

fn estimate(args: EstimateArgs, run: &mut Run) -> CliResult<()> {
    let series = load_series(&args.prices, &args.proxy, args.delta, args.max_lag)?;
    let cir = fit_cir_mle(series.interest_path(), args.delta, None)?;
    let price = select_lag(&series)?;
    if !cir.converged {
        log::warn!(
            "CIR fit did not converge after {} iterations",
            cir.iterations
        );
    }
    let params = ModelParams {
        a: cir.a,
        b: cir.b,
        sigma_i: cir.sigma_i,
        mu: price.mu,
        sigma_p: price.sigma_p,
        tau: price.tau,
        r: args.rate,
    };
    // history for valuation at the last observation date
    let n = series.proxy.len();
    let history =
        InterestHistory::from_grid(&series.proxy[n - series.max_lag() - 1..], args.delta)?;
    let mut pf = ParamsFile::new(params, history);
    pf.fit = Some(FitSummary::new(cir, price));
    run.json(&args.out, &pf)
}

#[derive(Serialize)]
struct GofReport {
    a: f64,
    b: f64,
    #[serde(rename = "sigma_I")]
    sigma_i: f64,
    refitted: bool,
    statistic: f64,
    p_value: f64,
    n: usize,
    clamped: usize,
}

fn gof(args: GofArgs, run: &mut Run) -> CliResult<()> {
    let y = load_proxy(&args.proxy)?;
    let (cir, refitted) = match &args.params {
        Some(p) => {
            let p = load_params(p)?.params;
            (
                attention_sv::params::CirParams::new(p.a, p.b, p.sigma_i),
                false,
            )
        }
        None => (fit_cir_mle(&y, args.delta, None)?.params(), true),
    };
    let res = generalized_residuals(&y, &cir, args.delta)?;
    let ks = ks_test_normal(&res.values)?;
    let report = GofReport {
        a: cir.a,
        b: cir.b,
        sigma_i: cir.sigma_i,
        refitted,
        statistic: ks.statistic,
        p_value: ks.p_value,
        n: ks.n,
        clamped: res.clamped.len(),
    };
    run.json(&args.out, &report)?;
    if let Some(path) = &args.residuals_out {
        let mut w = csv::Writer::from_writer(run.create(path)?);
        w.write_record(["index", "residual"])
            .map_err(|e| io_error(path, e))?;
        for (i, e) in res.values.iter().enumerate() {
            w.write_record([i.to_string(), e.to_string()])
                .map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PricedOption {
    strike: f64,
    expiry: f64,
    is_call: bool,
    #[serde(flatten)]
    result: PriceResult,
}

fn price(args: PriceArgs, run: &mut Run) -> CliResult<()> {
    let pf = load_params(&args.params)?;
    let p = pf.params;
    let rn = rn_or_default(args.rn.as_ref(), &p)?;
    let (s0, t, is_call) = (args.spot, args.expiry, !args.put);
    if !(s0 > 0.0) {
        return Err(CliError::Usage(format!(
            "--spot must be positive (got {s0})"
        )));
    }
    if args.strike.is_empty() {
        return Err(CliError::Usage("--strike needs at least one value".into()));
    }
    let ctx = || CharFnContext::at_origin(&p, rn, pf.history.clone(), s0.ln());
    let results: Vec<PriceResult> = match args.method {
        PriceMethod::Fourier => {
            let calls = price_call_fourier(&ctx(), &args.strike, t, &args.grid.grid())?;
            calls
                .iter()
                .zip(&args.strike)
                .map(|(c, &k)| {
                    if is_call {
                        *c
                    } else {
                        price_put(c, s0, k, t, p.r)
                    }
                })
                .collect()
        }
        PriceMethod::Lognormal => args
            .strike
            .iter()
            .map(|&k| price_lognormal(&ctx(), k, t, is_call))
            .collect::<Result<_, _>>()?,
        PriceMethod::Mc => {
            let seed = effective_seed(args.seed)?;
            run.seed = Some(seed);
            let opts: Vec<McOption> = args
                .strike
                .iter()
                .map(|&strike| McOption {
                    strike,
                    expiry: t,
                    is_call,
                })
                .collect();
            let settings = McSettings {
                n_paths: args.paths,
                seed,
                steps_per_year: args.steps_per_year,
            };
            price_mc_batch(&p, &rn, &pf.history, s0, &opts, &settings)?
        }
        PriceMethod::BlackScholes => {
            let sigma = args
                .sigma
                .ok_or_else(|| CliError::Usage("--method black-scholes needs --sigma".into()))?;
            args.strike
                .iter()
                .map(|&k| price_black_scholes(s0, k, sigma, p.r, t, is_call))
                .collect()
        }
    };
    let rows: Vec<PricedOption> = results
        .into_iter()
        .zip(&args.strike)
        .map(|(result, &strike)| PricedOption {
            strike,
            expiry: t,
            is_call,
            result,
        })
        .collect();
    let value = if rows.len() == 1 {
        serde_json::to_value(&rows[0])
    } else {
        serde_json::to_value(&rows)
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    match &args.out {
        Some(path) => run.json(path, &value),
        None => {
            let text =
                serde_json::to_string_pretty(&value).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn market_quotes(q: &QuoteArgs) -> CliResult<Vec<attention_sv::calibrate::MarketQuote>> {
    let valuation = parse_date(&q.valuation_date).map_err(CliError::Usage)?;
    let loaded = load_quotes(&q.quotes, valuation, q.index_level)?;
    for r in &loaded.rejected {
        log::warn!("{}:{}: {}", q.quotes.display(), r.row, r.reason);
    }
    let kept = filter_quotes(&loaded.quotes);
    log::info!(
        "{} quotes read, {} kept after the spread filter",
        loaded.quotes.len(),
        kept.len()
    );
    if kept.is_empty() {
        return Err(CliError::Run(attention_sv::Error::Domain(format!(
            "no quotes in {} pass the filter",
            q.quotes.display()
        ))));
    }
    Ok(kept)
}

fn calibrate(args: CalibrateArgs, run: &mut Run) -> CliResult<()> {
    let pf = load_params(&args.params)?;
    let quotes = market_quotes(&args.quotes)?;
    let result = calibrate_rn(
        &pf.params,
        &pf.history,
        &quotes,
        args.quotes.index_level,
        &args.grid.grid(),
    )?;
    if result.weakly_identified {
        log::warn!(
            "risk-neutral parameters are weakly identified (curvature ratio {:.3e})",
            result.curvature_ratio
        );
    }
    run.json(&args.out, &result)?;
    if let Some(path) = &args.quotes_out {
        let w = run.create(path)?;
        result.write_quotes_csv(w)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExperimentDetails {
    lag_counts: Vec<LagCount>,
    failures: Vec<attention_sv::sim::Failure>,
}

#[derive(Serialize)]
struct LagCount {
    horizon: f64,
    modal_lag: Option<usize>,
    counts: Vec<usize>,
}

fn experiment(args: ExperimentArgs, run: &mut Run) -> CliResult<()> {
    let seed = effective_seed(args.seed)?;
    run.seed = Some(seed);
    let params = ModelParams {
        a: args.a,
        b: args.b,
        sigma_i: args.sigma_i,
        mu: args.mu,
        sigma_p: args.sigma_p,
        tau: args.tau,
        r: 0.0,
    };
    if !(args.spot > 0.0) {
        return Err(CliError::Usage(format!(
            "--spot must be positive (got {})",
            args.spot
        )));
    }
    let config = ExperimentConfig {
        params,
        history: InterestHistory::constant(args.history_value, args.history_length)?,
        delta: args.delta,
        x0: args.spot.ln(),
        horizons: args.horizons,
        replications: args.reps,
        seed,
    };
    let summary = run_experiment(&config)?;
    if !summary.failures.is_empty() {
        log::warn!("{} fits failed and were left out", summary.failures.len());
    }
    let w = run.create(&args.out)?;
    summary.write_csv(w)?;
    if let Some(path) = &args.details_out {
        let details = ExperimentDetails {
            lag_counts: summary
                .lag_counts
                .iter()
                .map(|(h, c)| LagCount {
                    horizon: *h,
                    modal_lag: summary.modal_lag(*h),
                    counts: c.clone(),
                })
                .collect(),
            failures: summary.failures.clone(),
        };
        run.json(path, &details)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    n_quotes: usize,
    rmse_model: f64,
    rmse_black_scholes: f64,
    /// Model RMSE over Black-Scholes RMSE.
    ratio: f64,
    sigma_black_scholes: f64,
    rn: RNParams,
}

fn compare_bs(args: CompareBsArgs, run: &mut Run) -> CliResult<()> {
    let pf = load_params(&args.params)?;
    let p = pf.params;
    let rn = rn_or_default(args.rn.as_ref(), &p)?;
    let sigma = match (args.sigma, &args.prices, args.delta) {
        (Some(s), _, _) => s,
        (None, Some(prices), Some(delta)) => {
            let px = load_prices(prices)?;
            let returns: Vec<f64> = px.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
            fit_bs_sigma(&returns, delta)?
        }
        _ => {
            return Err(CliError::Usage(
                "give --sigma or --prices with --delta".into(),
            ))
        }
    };
    let s0 = args.quotes.index_level;
    let quotes = market_quotes(&args.quotes)?;
    let model = model_prices(&p, rn, &pf.history, &quotes, s0, &args.grid.grid())?;
    let bs: Vec<f64> = quotes
        .iter()
        .map(|q| {
            price_black_scholes(
                s0,
                q.quote.strike,
                sigma,
                p.r,
                q.quote.expiry,
                q.quote.is_call,
            )
            .value
        })
        .collect();
    let mids: Vec<f64> = quotes.iter().map(|q| q.mid).collect();
    let rmse_model = rmse(&model, &mids)?;
    let rmse_black_scholes = rmse(&bs, &mids)?;
    let cmp = Comparison {
        n_quotes: quotes.len(),
        rmse_model,
        rmse_black_scholes,
        ratio: rmse_model / rmse_black_scholes,
        sigma_black_scholes: sigma,
        rn,
    };
    run.json(&args.out, &cmp)
}

fn dispatch(command: Command, run: &mut Run) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a, run),
        Command::Estimate(a) => estimate(a, run),
        Command::Gof(a) => gof(a, run),
        Command::Price(a) => price(a, run),
        Command::Calibrate(a) => calibrate(a, run),
        Command::Experiment(a) => experiment(a, run),
        Command::CompareBs(a) => compare_bs(a, run),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Estimate(_) => "estimate",
        Command::Gof(_) => "gof",
        Command::Price(_) => "price",
        Command::Calibrate(_) => "calibrate",
        Command::Experiment(_) => "experiment",
        Command::CompareBs(_) => "compare-bs",
    }
}

/// Runs the command line `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut run = Run {
        command: command_name(&cli.command).to_string(),
        arguments: argv
            .iter()
            .skip(1)
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        seed: None,
        outputs: Vec::new(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let outcome = pool
        .install(|| dispatch(cli.command, &mut run))
        .and_then(|_| run.finish());
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
