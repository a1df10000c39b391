//! Regression against published estimates on the bundled Bitcoin data.

use std::fs;
use std::path::PathBuf;

use attention_sv::dataio::{load_proxy, series_from_readers};
use attention_sv::estimate::{
    cir_loglik, fit_cir_mle, generalized_residuals, ks_test_normal, select_lag,
};
use attention_sv::params::CirParams;

const DELTA: f64 = 1.0 / 365.0;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

/// Rows of a `date,...` file with `from <= date <= to`, header kept.
fn window(name: &str, from: &str, to: &str) -> String {
    let text = fs::read_to_string(data(name)).unwrap();
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    for l in lines.filter(|l| (from..=to).contains(&&l[..10])) {
        out.push_str(l);
        out.push('\n');
    }
    out
}

#[test]
fn proxy_goodness_of_fit_p_values() {
    for (file, expected) in [
        ("wikipedia_views.csv", 0.326605),
        ("log_volume.csv", 0.566240),
        ("log_miner_revenue.csv", 0.750578),
    ] {
        let y = load_proxy(&data(file)).unwrap();
        let fit = fit_cir_mle(&y, DELTA, None).unwrap();
        let res = generalized_residuals(&y, &fit.params(), DELTA).unwrap();
        let p = ks_test_normal(&res.values).unwrap().p_value;
        assert!(
            (p - expected).abs() < 0.01,
            "{file}: p = {p}, expected about {expected}"
        );
    }
}

struct Published {
    proxy: &'static str,
    a: f64,
    b: f64,
    sigma_i: f64,
    mu: f64,
    sigma_p: f64,
    lag: usize,
}

fn check_window(from: &str, to: &str, expected: &[Published]) {
    let prices = window("btc_prices.csv", from, to);
    for e in expected {
        let proxy = window(e.proxy, from, to);
        let series = series_from_readers(
            ("prices", prices.as_bytes()),
            ("proxy", proxy.as_bytes()),
            DELTA,
            20,
        )
        .unwrap();
        let cir = fit_cir_mle(series.interest_path(), DELTA, None).unwrap();
        let price = select_lag(&series).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        let ctx = format!("{} {from}..{to}", e.proxy);
        assert_eq!(price.lag, e.lag, "{ctx}");
        assert!(rel(price.mu, e.mu) < 1e-9, "{ctx}: mu {}", price.mu);
        assert!(
            rel(price.sigma_p, e.sigma_p) < 1e-9,
            "{ctx}: sigma_P {}",
            price.sigma_p
        );
        // the CIR likelihood is flat near its optimum, so the published values
        // carry optimizer noise; ours must be at least as likely
        assert!(rel(cir.a, e.a) < 1e-3, "{ctx}: a {}", cir.a);
        assert!(rel(cir.b, e.b) < 1e-3, "{ctx}: b {}", cir.b);
        assert!(
            rel(cir.sigma_i, e.sigma_i) < 1e-3,
            "{ctx}: sigma_I {}",
            cir.sigma_i
        );
        let published = cir_loglik(
            series.interest_path(),
            &CirParams::new(e.a, e.b, e.sigma_i),
            DELTA,
        )
        .unwrap();
        assert!(
            cir.loglik >= published - 1e-9,
            "{ctx}: loglik {} < {published}",
            cir.loglik
        );
    }
}

#[test]
fn one_year_window_ending_august_2021() {
    check_window(
        "2020-08-01",
        "2021-08-01",
        &[
            Published {
                proxy: "log_miner_revenue.csv",
                a: 8.342184688596092,
                b: 17.270484808198667,
                sigma_i: 0.5786044803913492,
                mu: 1.3602772637531113,
                sigma_p: 0.1841714654468666,
                lag: 13,
            },
            Published {
                proxy: "log_volume.csv",
                a: 67.85677161386609,
                b: 19.774613515879285,
                sigma_i: 2.3232067086043924,
                mu: 1.3401924812852335,
                sigma_p: 0.170787388587403,
                lag: 5,
            },
            Published {
                proxy: "wikipedia_views.csv",
                a: 32.74975407219762,
                b: 38.31577742597485,
                sigma_i: 32.68459801442638,
                mu: 1.970923405983255,
                sigma_p: 0.1343015843898279,
                lag: 8,
            },
        ],
    );
}

#[test]
fn one_year_window_ending_august_2022() {
    check_window(
        "2021-08-01",
        "2022-08-01",
        &[
            Published {
                proxy: "log_miner_revenue.csv",
                a: 21.49116374725952,
                b: 17.375399358978733,
                sigma_i: 0.574038737930194,
                mu: -0.7785987871523574,
                sigma_p: 0.1638252838989204,
                lag: 15,
            },
            Published {
                proxy: "log_volume.csv",
                a: 245.49474617826627,
                b: 19.363333006676847,
                sigma_i: 2.938917890634907,
                mu: -0.7982168350187515,
                sigma_p: 0.1552170893892053,
                lag: 5,
            },
            Published {
                proxy: "wikipedia_views.csv",
                a: 142.1663293185358,
                b: 25.56298439766862,
                sigma_i: 38.82996215562614,
                mu: -0.684651230241187,
                sigma_p: 0.1466495242501431,
                lag: 0,
            },
        ],
    );
}
