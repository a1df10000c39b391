//! File-based ingestion of price, proxy and quote CSVs, and the versioned
//! JSON parameter format.
//!
//! CSV headers are fixed: prices `date,price`, proxy `date,value`, quotes
//! `expiry_date,strike,is_call,bid_btc,ask_btc`. Dates are ISO-8601.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimate::{CirFit, PriceFit};
use crate::params::{InterestHistory, ModelParams, OptionQuote, RNParams, SeriesPair};

pub const SCHEMA_VERSION: u32 = 1;

/// Day-count basis for quote expiries.
pub const DAYS_PER_YEAR: f64 = 365.0;

fn parse_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

fn io_err(file: &str, e: impl std::fmt::Display) -> Error {
    Error::Io {
        file: file.to_string(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<(String, File)> {
    let name = path.display().to_string();
    let f = File::open(path).map_err(|e| io_err(&name, e))?;
    Ok((name, f))
}

/// Parses an ISO-8601 date, or a date-time whose date part is used.
pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(dt.date_naive());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .map(|dt| dt.date())
        .map_err(|_| format!("invalid date {s:?} (expected YYYY-MM-DD)"))
}

// Rows are (line number, fields); the header must match exactly.
fn read_rows<R: Read>(name: &str, input: R, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(name, 1, e.to_string()))?;
    let got: Vec<&str> = got
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}'))
        .collect();
    if got != header {
        return Err(parse_err(
            name,
            1,
            format!(
                "header {:?} does not match {:?}",
                got.join(","),
                header.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(name, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse_f64(name: &str, line: usize, field: &str, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| {
        parse_err(
            name,
            line,
            format!("{field}: cannot parse {s:?} as a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            name,
            line,
            format!("{field}: value {s:?} is not finite"),
        ));
    }
    Ok(v)
}

/// Reads a two-column `date,<column>` file into a date-keyed map of positive values.
fn read_dated<R: Read>(name: &str, input: R, column: &str) -> Result<BTreeMap<NaiveDate, f64>> {
    let mut out = BTreeMap::new();
    for (line, row) in read_rows(name, input, &["date", column])? {
        let date = parse_date(&row[0]).map_err(|m| parse_err(name, line, m))?;
        let v = parse_f64(name, line, column, &row[1])?;
        if !(v > 0.0) {
            return Err(parse_err(
                name,
                line,
                format!("{column} must be positive (got {v})"),
            ));
        }
        if out.insert(date, v).is_some() {
            return Err(parse_err(name, line, format!("duplicate date {date}")));
        }
    }
    Ok(out)
}

// Ranges of calendar days absent between consecutive sorted dates.
fn missing_days(dates: &[NaiveDate]) -> Vec<String> {
    dates
        .windows(2)
        .filter(|w| (w[1] - w[0]).num_days() != 1)
        .map(|w| {
            let first = w[0].succ_opt().unwrap_or(w[0]);
            let last = w[1].pred_opt().unwrap_or(w[1]);
            if first == last {
                first.to_string()
            } else {
                format!("{first}..{last}")
            }
        })
        .collect()
}

// One dated column on its own, sorted by date, with no missing days.
fn single_from_reader<R: Read>(name: &str, input: R, column: &str) -> Result<Vec<f64>> {
    let pv = read_dated(name, input, column)?;
    let dates: Vec<NaiveDate> = pv.keys().copied().collect();
    let gaps = missing_days(&dates);
    if !gaps.is_empty() {
        return Err(Error::Domain(format!(
            "dates missing from {name}: {}",
            gaps.join(", ")
        )));
    }
    Ok(pv.into_values().collect())
}

/// Reads a `date,value` proxy file on its own, sorted by date.
pub fn proxy_from_reader<R: Read>(name: &str, input: R) -> Result<Vec<f64>> {
    single_from_reader(name, input, "value")
}

pub fn load_proxy(path: &Path) -> Result<Vec<f64>> {
    let (name, f) = open(path)?;
    proxy_from_reader(&name, f)
}

/// Reads a `date,price` file on its own, sorted by date.
pub fn load_prices(path: &Path) -> Result<Vec<f64>> {
    let (name, f) = open(path)?;
    single_from_reader(&name, f, "price")
}

/// Joins prices and proxy on date and builds a [`SeriesPair`] whose first
/// `max_lag` proxy observations form the history.
///
/// Records must be daily and consecutive after the join; missing dates are
/// reported as ranges.
pub fn series_from_readers<P: Read, Q: Read>(
    prices: (&str, P),
    proxy: (&str, Q),
    delta: f64,
    max_lag: usize,
) -> Result<SeriesPair> {
    let px = read_dated(prices.0, prices.1, "price")?;
    let pv = read_dated(proxy.0, proxy.1, "value")?;
    let joined: Vec<(NaiveDate, f64, f64)> = px
        .iter()
        .filter_map(|(d, p)| pv.get(d).map(|v| (*d, *p, *v)))
        .collect();
    if joined.len() < max_lag + 1 {
        return Err(Error::Domain(format!(
            "{} and {} share {} dates; need at least max_lag + 1 = {}",
            prices.0,
            proxy.0,
            joined.len(),
            max_lag + 1
        )));
    }
    let dates: Vec<NaiveDate> = joined.iter().map(|r| r.0).collect();
    let gaps = missing_days(&dates);
    if !gaps.is_empty() {
        return Err(Error::Domain(format!(
            "dates missing from the join of {} and {}: {}",
            prices.0,
            proxy.0,
            gaps.join(", ")
        )));
    }
    let log_prices = joined[max_lag..].iter().map(|r| r.1.ln()).collect();
    let proxy_vals = joined.iter().map(|r| r.2).collect();
    let mut s = SeriesPair::new(delta, log_prices, proxy_vals)?;
    s.start_date = Some(joined[max_lag].0.to_string());
    Ok(s)
}

pub fn load_series(prices: &Path, proxy: &Path, delta: f64, max_lag: usize) -> Result<SeriesPair> {
    let (pn, pf) = open(prices)?;
    let (vn, vf) = open(proxy)?;
    series_from_readers((&pn, pf), (&vn, vf), delta, max_lag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteLoad {
    /// Sorted by expiry, strike, then calls before puts.
    pub quotes: Vec<OptionQuote>,
    pub rejected: Vec<RejectedRow>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "c" | "call" => Some(true),
        "false" | "0" | "p" | "put" => Some(false),
        _ => None,
    }
}

/// Reads quotes with premiums in BTC, converting them to currency at
/// `index_level` and expiries to ACT/365 year fractions from `valuation`.
///
/// Rows expiring on or before the valuation date are returned in
/// [`QuoteLoad::rejected`]; malformed rows are errors.
pub fn quotes_from_reader<R: Read>(
    name: &str,
    input: R,
    valuation: NaiveDate,
    index_level: f64,
) -> Result<QuoteLoad> {
    if !(index_level > 0.0) || !index_level.is_finite() {
        return Err(Error::Domain(format!(
            "index level must be positive (got {index_level})"
        )));
    }
    let header = ["expiry_date", "strike", "is_call", "bid_btc", "ask_btc"];
    let mut quotes = Vec::new();
    let mut rejected = Vec::new();
    for (line, row) in read_rows(name, input, &header)? {
        let expiry = parse_date(&row[0]).map_err(|m| parse_err(name, line, m))?;
        let strike = parse_f64(name, line, "strike", &row[1])?;
        let is_call = parse_flag(&row[2]).ok_or_else(|| {
            parse_err(
                name,
                line,
                format!("is_call: {:?} is not true/false", row[2]),
            )
        })?;
        let bid = parse_f64(name, line, "bid_btc", &row[3])?;
        let ask = parse_f64(name, line, "ask_btc", &row[4])?;
        let days = (expiry - valuation).num_days();
        if days <= 0 {
            rejected.push(RejectedRow {
                row: line,
                reason: format!("expiry {expiry} is not after valuation date {valuation}"),
            });
            continue;
        }
        quotes.push(OptionQuote {
            strike,
            expiry: days as f64 / DAYS_PER_YEAR,
            bid: bid * index_level,
            ask: ask * index_level,
            underlying: index_level,
            is_call,
        });
    }
    quotes.sort_by(|a, b| {
        a.expiry
            .total_cmp(&b.expiry)
            .then(a.strike.total_cmp(&b.strike))
            .then(b.is_call.cmp(&a.is_call))
            .then(a.bid.total_cmp(&b.bid))
            .then(a.ask.total_cmp(&b.ask))
    });
    Ok(QuoteLoad { quotes, rejected })
}

pub fn load_quotes(path: &Path, valuation: NaiveDate, index_level: f64) -> Result<QuoteLoad> {
    let (name, f) = open(path)?;
    quotes_from_reader(&name, f, valuation, index_level)
}

/// Everything needed for one estimation and calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub series: SeriesPair,
    pub quotes: Vec<OptionQuote>,
    pub valuation_date: String,
}

/// Estimation summary stored alongside the parameters.
///
/// The top-level `loglik`, `aic` and `bic` are those of the price process at
/// the selected lag; the CIR likelihood sits in `cir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub cir: CirFit,
    pub price: PriceFit,
}

impl FitSummary {
    pub fn new(cir: CirFit, price: PriceFit) -> Self {
        FitSummary {
            loglik: price.loglik,
            aic: price.aic,
            bic: price.bic,
            converged: cir.converged && !price.degenerate,
            cir,
            price,
        }
    }
}

/// The persisted parameter set. Fit output uses the same layout, so a fit
/// file can be passed wherever parameters are expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub params: ModelParams,
    pub history: InterestHistory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rn: Option<RNParams>,
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

const KNOWN_FIELDS: [&str; 16] = [
    "schema_version",
    "a",
    "b",
    "sigma_I",
    "mu",
    "sigma_P",
    "tau",
    "r",
    "history",
    "rn",
    "loglik",
    "aic",
    "bic",
    "converged",
    "cir",
    "price",
];

impl ParamsFile {
    pub fn new(params: ModelParams, history: InterestHistory) -> Self {
        ParamsFile {
            schema_version: SCHEMA_VERSION,
            params,
            history,
            rn: None,
            fit: None,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let p = &self.params;
        let mut vals = vec![
            ("a", p.a),
            ("b", p.b),
            ("sigma_I", p.sigma_i),
            ("mu", p.mu),
            ("sigma_P", p.sigma_p),
            ("tau", p.tau),
            ("r", p.r),
        ];
        for (t, v) in self.history.knots() {
            vals.push(("history time", t));
            vals.push(("history value", v));
        }
        if let Some(rn) = &self.rn {
            vals.extend([
                ("a_tilde", rn.a_tilde),
                ("b_tilde", rn.b_tilde),
                ("lambda_a", rn.lambda_a),
                ("lambda_ab", rn.lambda_ab),
            ]);
        }
        match vals.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Domain(format!("{name} = {v} cannot be written"))),
            None => Ok(()),
        }
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        self.check_finite()?;
        serde_json::to_writer_pretty(out, self).map_err(|e| io_err("<params>", e))
    }

    /// Parses a parameter file; returns it with the names of ignored fields.
    pub fn from_reader<R: Read>(name: &str, input: R) -> Result<(Self, Vec<String>)> {
        let v: Value =
            serde_json::from_reader(input).map_err(|e| parse_err(name, e.line(), e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema(format!("{name}: expected a JSON object")))?;
        match obj.get("schema_version").and_then(Value::as_u64) {
            Some(n) if n == SCHEMA_VERSION as u64 => {}
            Some(n) => {
                return Err(Error::Schema(format!(
                    "{name}: schema_version {n} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => {
                return Err(Error::Schema(format!(
                    "{name}: missing schema_version (expected {SCHEMA_VERSION})"
                )))
            }
        }
        let unknown: Vec<String> = obj
            .keys()
            .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
            .cloned()
            .collect();
        for k in &unknown {
            log::warn!("{name}: ignoring unknown field {k:?}");
        }
        let parsed: ParamsFile =
            serde_json::from_value(v).map_err(|e| Error::Schema(format!("{name}: {e}")))?;
        parsed.check_finite()?;
        Ok((parsed, unknown))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let name = path.display().to_string();
        let f = File::create(path).map_err(|e| io_err(&name, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.to_writer(&mut w)?;
        w.write_all(b"\n").map_err(|e| io_err(&name, e))?;
        w.flush().map_err(|e| io_err(&name, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (name, f) = open(path)?;
        Ok(Self::from_reader(&name, f)?.0)
    }
}

/// Reads risk-neutral parameters from a file holding either an `rn` object
/// (parameter files, calibration output) or the parameters themselves.
pub fn load_rn(path: &Path) -> Result<RNParams> {
    let (name, f) = open(path)?;
    let v: Value =
        serde_json::from_reader(f).map_err(|e| parse_err(&name, e.line(), e.to_string()))?;
    let inner = v.get("rn").cloned().unwrap_or(v);
    let rn: RNParams =
        serde_json::from_value(inner).map_err(|e| Error::Schema(format!("{name}: {e}")))?;
    if ![rn.a_tilde, rn.b_tilde, rn.lambda_a, rn.lambda_ab]
        .iter()
        .all(|x| x.is_finite())
    {
        return Err(Error::Schema(format!(
            "{name}: non-finite risk-neutral parameter"
        )));
    }
    Ok(rn)
}
