#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attention_sv::calibrate::{model_prices, MarketQuote};
use attention_sv::params::{InterestHistory, ModelParams, OptionQuote, RNParams};
use attention_sv::pricer::FourierGrid;

pub const BIN: &str = env!("CARGO_BIN_EXE_attn-sv");

pub fn attn(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("ATTN_PRICER_SEED")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let out = attn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn params_json(dir: &Path) -> PathBuf {
    let path = dir.join("p.json");
    fs::write(
        &path,
        r#"{"schema_version":1,"a":30,"b":15,"sigma_I":0.6,"mu":0,"sigma_P":0.2,"tau":0.025,"r":0.01,"history":[[-0.05,14],[0,14]]}"#,
    )
    .unwrap();
    path
}

pub fn write_quotes(dir: &Path) {
    let mut p = ModelParams::reference();
    p.r = 0.01;
    let h = InterestHistory::constant(14.0, 0.05).unwrap();
    let rn = RNParams::from_tilde(&p, 20.0, 18.0).unwrap();
    let index = 20000.0;
    let mut quotes = Vec::new();
    let mut rows = Vec::new();
    for (days, date) in [(30, "2021-01-31"), (91, "2021-04-02")] {
        for m in [0.85, 0.95, 1.0, 1.05, 1.15] {
            let q = OptionQuote {
                strike: m * index,
                expiry: days as f64 / 365.0,
                bid: 0.0,
                ask: 0.0,
                underlying: index,
                is_call: m >= 1.0,
            };
            quotes.push(MarketQuote { quote: q, mid: 0.0 });
            rows.push((date, m * index, m >= 1.0));
        }
    }
    let prices = model_prices(&p, rn, &h, &quotes, index, &FourierGrid::default()).unwrap();
    let mut text = String::from("expiry_date,strike,is_call,bid_btc,ask_btc\n");
    for ((date, k, call), v) in rows.iter().zip(prices) {
        let btc = v / index;
        text += &format!("{date},{k},{call},{},{}\n", btc * 0.99, btc * 1.01);
    }
    text += "2020-12-01,20000,true,0.05,0.06\n";
    fs::write(dir.join("q.csv"), text).unwrap();
}

pub fn pipeline(dir: &Path, threads: &str) {
    params_json(dir);
    write_quotes(dir);
    let t = ["--threads", threads];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&t);
        ok(dir, &all);
    };
    run(&[
        "simulate",
        "--params",
        "p.json",
        "--steps",
        "400",
        "--delta",
        "1/365",
        "--spot",
        "20000",
        "--seed",
        "9",
        "--out",
        "path.csv",
        "--prices-out",
        "px.csv",
        "--proxy-out",
        "pv.csv",
    ]);
    run(&[
        "estimate",
        "--prices",
        "px.csv",
        "--proxy",
        "pv.csv",
        "--delta",
        "1/365",
        "--max-lag",
        "12",
        "--out",
        "fit.json",
    ]);
    run(&[
        "gof",
        "--proxy",
        "pv.csv",
        "--delta",
        "1/365",
        "--out",
        "gof.json",
        "--residuals-out",
        "res.csv",
    ]);
    run(&[
        "price",
        "--params",
        "fit.json",
        "--spot",
        "20000",
        "--strike",
        "18000,20000,22000",
        "--expiry",
        "0.25",
        "--out",
        "price.json",
    ]);
    run(&[
        "price", "--params", "p.json", "--spot", "20000", "--strike", "20000", "--expiry", "0.25",
        "--method", "mc", "--paths", "20000", "--seed", "4", "--out", "mc.json",
    ]);
    run(&[
        "calibrate",
        "--params",
        "p.json",
        "--quotes",
        "q.csv",
        "--valuation-date",
        "2021-01-01",
        "--index-level",
        "20000",
        "--out",
        "cal.json",
        "--quotes-out",
        "cal.csv",
    ]);
    run(&[
        "compare-bs",
        "--params",
        "p.json",
        "--rn",
        "cal.json",
        "--quotes",
        "q.csv",
        "--valuation-date",
        "2021-01-01",
        "--index-level",
        "20000",
        "--prices",
        "px.csv",
        "--delta",
        "1/365",
        "--out",
        "bs.json",
    ]);
    run(&[
        "experiment",
        "--a",
        "30",
        "--b",
        "15",
        "--sigma-i",
        "0.6",
        "--mu",
        "0",
        "--sigma-p",
        "0.2",
        "--tau",
        "0.025",
        "--delta",
        "1/360",
        "--horizons",
        "0.25,0.5",
        "--reps",
        "6",
        "--seed",
        "7",
        "--out",
        "exp.csv",
        "--details-out",
        "exp.json",
    ]);
}

pub const OUTPUTS: [&str; 14] = [
    "path.csv",
    "px.csv",
    "pv.csv",
    "fit.json",
    "gof.json",
    "res.csv",
    "price.json",
    "mc.json",
    "cal.json",
    "cal.csv",
    "bs.json",
    "exp.csv",
    "exp.json",
    "fit.json.manifest.json",
];
