//! Special functions for the CIR transition law.
//!
//! Everything is evaluated in log space. The modified Bessel function uses a
//! peak-centred power series with log-sum-exp accumulation for moderate
//! orders, the Debye uniform expansion for large orders, and the Hankel
//! expansion for large arguments at small order.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Orders at or above this use the Debye expansion.
const DEBYE_MIN_ORDER: f64 = 50.0;
/// Below [`DEBYE_MIN_ORDER`], arguments above this use the Hankel expansion.
const HANKEL_MIN_ARG: f64 = 1.0e4;

/// `ln I_nu(z) - z` for `nu > -1` and `z >= 0`.
///
/// Returns `-inf` for `z == 0` and `nu > 0`.
pub fn ln_bessel_i_scaled(nu: f64, z: f64) -> f64 {
    if z.is_nan() || nu.is_nan() || nu <= -1.0 || z < 0.0 {
        return f64::NAN;
    }
    if z == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if nu >= DEBYE_MIN_ORDER {
        debye(nu, z)
    } else if z >= HANKEL_MIN_ARG {
        hankel(nu, z)
    } else {
        series(nu, z) - z
    }
}

/// `ln I_nu(z)`.
pub fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    ln_bessel_i_scaled(nu, z) + z
}

/// Power series `Σ (z/2)^{2k+ν} / (k! Γ(k+ν+1))`, summed outward from its largest term.
fn series(nu: f64, z: f64) -> f64 {
    let half = 0.5 * z;
    let ln_half = half.ln();
    let q = half * half;
    // ratio t_{k+1}/t_k = q / ((k+1)(k+nu+1)) crosses one at the peak
    let disc = (nu * nu + z * z).sqrt();
    let peak = ((disc - nu - 2.0) * 0.5).ceil().max(0.0) as u64;
    let ln_term = |k: f64| (2.0 * k + nu) * ln_half - ln_gamma(k + 1.0) - ln_gamma(k + nu + 1.0);
    let ln_peak = ln_term(peak as f64);

    // relative to the peak term
    let mut sum = 1.0;
    let mut t = 1.0;
    let mut k = peak;
    while k > 0 {
        t *= (k as f64) * (k as f64 + nu) / q;
        sum += t;
        k -= 1;
        if t < 1e-18 * sum {
            break;
        }
    }
    t = 1.0;
    k = peak;
    loop {
        t *= q / ((k as f64 + 1.0) * (k as f64 + nu + 1.0));
        sum += t;
        k += 1;
        if t < 1e-18 * sum {
            break;
        }
    }
    ln_peak + sum.ln()
}

/// Debye expansion in `1/nu`, uniform in `z/nu`.
fn debye(nu: f64, z: f64) -> f64 {
    let w = (nu * nu + z * z).sqrt();
    let t = nu / w;
    // ν·η - z, with η = sqrt(1+x²) + ln(x / (1 + sqrt(1+x²))), x = z/ν
    let eta_minus = (w - z) + nu * (z / (nu + w)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
    let u3 = t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
    let u4 = t2
        * t2
        * (4465125.0
            + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0))))
        / 39813120.0;
    let inv = 1.0 / nu;
    let corr = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
    eta_minus - 0.5 * (LN_2PI + nu.ln()) + 0.5 * t.ln() + corr.ln()
}

/// Large-argument expansion `e^z / sqrt(2πz) Σ (-1)^k a_k(ν) / z^k`, scaled by `e^{-z}`.
fn hankel(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let j = (2 * k - 1) as f64;
        let next = -term * (mu - j * j) / (k as f64 * 8.0 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    -0.5 * (LN_2PI + z.ln()) + sum.ln()
}

/// Log-density of the noncentral chi-squared law with `df` degrees of freedom
/// and noncentrality `ncp > 0`, at `x > 0`.
pub fn ln_ncx2_pdf(x: f64, df: f64, ncp: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let order = 0.5 * df - 1.0;
    if ncp == 0.0 {
        return (0.5 * df - 1.0) * x.ln() - 0.5 * x - 0.5 * df * LN_2 - ln_gamma(0.5 * df);
    }
    let z = (ncp * x).sqrt();
    let gap = x.sqrt() - ncp.sqrt();
    -LN_2 - 0.5 * gap * gap + 0.5 * order * (x / ncp).ln() + ln_bessel_i_scaled(order, z)
}

/// Lower and upper tail probabilities of the noncentral chi-squared law.
///
/// Sums the Poisson mixture of central chi-squared laws outward from the
/// Poisson mode, stepping the regularized incomplete gamma function by its
/// recurrence in the shape parameter.
pub fn ncx2_cdf_pair(x: f64, df: f64, ncp: f64) -> (f64, f64) {
    if !(x > 0.0) {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let y = 0.5 * x;
    let m = 0.5 * ncp;
    let ln_y = y.ln();
    let j0 = m.floor();
    let a0 = 0.5 * df + j0;
    let ln_w0 = if m > 0.0 {
        j0 * m.ln() - m - ln_gamma(j0 + 1.0)
    } else {
        0.0
    };
    let p0 = gamma_lr(a0, y);
    let q0 = gamma_ur(a0, y);
    // ln of y^a e^{-y} / Γ(a+1), the step P(a) - P(a+1)
    let ln_step = |a: f64| a * ln_y - y - ln_gamma(a + 1.0);

    let w0 = ln_w0.exp();
    let mut lower = w0 * p0;
    let mut upper = w0 * q0;

    // upward in j
    let (mut w, mut p, mut q) = (w0, p0, q0);
    let mut j = j0;
    loop {
        let s = ln_step(0.5 * df + j).exp();
        p = (p - s).max(0.0);
        q = (q + s).min(1.0);
        if m > 0.0 {
            w *= m / (j + 1.0);
        } else {
            w = 0.0;
        }
        j += 1.0;
        lower += w * p;
        upper += w * q;
        // past the mode the weights only shrink
        if w < 1e-20 {
            break;
        }
    }
    // downward in j
    let (mut w, mut p, mut q) = (w0, p0, q0);
    let mut j = j0;
    while j > 0.0 {
        w *= j / m;
        j -= 1.0;
        let s = ln_step(0.5 * df + j).exp();
        p = (p + s).min(1.0);
        q = (q - s).max(0.0);
        lower += w * p;
        upper += w * q;
        if w < 1e-20 {
            break;
        }
    }
    (lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0))
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn norm_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[cfg(test)]
mod tests {
    use super::*;

    // ln I_nu(z) at 40 significant digits (mpmath)
    const LN_BESSEL_I: &[(f64, f64, f64)] = &[
        (0.0, 0.5, 0.0615497191854813039),
        (0.0, 10.0, 7.94297208311869555),
        (0.3, 2.0, 0.778240798369861784),
        (2.5, 40.0, 37.1606851736484186),
        (10.0, 3.0, -10.8469237373866717),
        (20.0, 500.0, 495.573660427886829),
        (35.0, 20000.0, 19994.098698182834),
        (49.0, 100000.0, 99993.312594924531),
        (60.0, 60.0, 28.8312398627034809),
        (120.0, 5000.0, 4993.38241499191671),
        (1249.0, 55800.0, 55779.6382538620953),
        (1249.0, 300.0, -1384.82069016979593),
        (5.0, 20000.0, 19994.1286989250609),
        (0.0, 1000000.0, 999992.173306312813),
        (-0.5, 3.0, 1.53423100759900286),
        (80.0, 0.001, -881.745321045973872),
    ];

    #[test]
    fn ln_bessel_matches_reference() {
        for &(nu, z, expected) in LN_BESSEL_I {
            let got = ln_bessel_i(nu, z);
            let tol = 1e-12 * expected.abs().max(1.0);
            assert!(
                (got - expected).abs() < tol,
                "nu={nu} z={z}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn regimes_agree_at_boundaries() {
        // series against Debye just above the switch, and against Hankel near it
        for &(nu, z) in &[(50.0, 10.0), (55.0, 400.0), (70.0, 2000.0), (100.0, 50.0)] {
            let s = series(nu, z) - z;
            let d = debye(nu, z);
            assert!(
                (s - d).abs() < 1e-11 * s.abs().max(1.0),
                "nu={nu} z={z}: {s} vs {d}"
            );
        }
        for &(nu, z) in &[(0.0, 1.0e4), (3.0, 1.2e4), (20.0, 1.0e4)] {
            let s = series(nu, z) - z;
            let h = hankel(nu, z);
            assert!(
                (s - h).abs() < 1e-11 * s.abs().max(1.0),
                "nu={nu} z={z}: {s} vs {h}"
            );
        }
    }

    #[test]
    fn ncx2_density_reference() {
        let cases = [
            (56000.0, 2500.0, 53600.0, -7.08972295083994),
            (55000.0, 2500.0, 53600.0, -9.838501166266708),
            (5.0, 4.0, 3.0, -2.2747467624915263),
            (60.0, 10.0, 100.0, -7.451256313597175),
            (0.2, 2.5, 0.5, -1.5006097838666537),
        ];
        for (x, df, ncp, expected) in cases {
            let got = ln_ncx2_pdf(x, df, ncp);
            assert!(
                (got - expected).abs() < 1e-9,
                "{x} {df} {ncp}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn ncx2_cdf_reference() {
        // (x, df, ncp, lower, upper) from an independent implementation
        let cases = [
            (
                56000.0,
                2500.0,
                53600.0,
                0.4162606405528775,
                0.5837393594471247,
            ),
            (
                55000.0,
                2500.0,
                53600.0,
                0.009184734791416982,
                0.9908152652085871,
            ),
            (
                57500.0,
                2500.0,
                53600.0,
                0.9985221216933358,
                0.001477878306672008,
            ),
            (5.0, 4.0, 3.0, 0.3884149155488383, 0.611585084451162),
            (60.0, 10.0, 100.0, 0.0028435900438562407, 0.9971564099561437),
            (0.2, 2.5, 0.5, 0.03698150005331976, 0.9630184999466803),
        ];
        for (x, df, ncp, lo, up) in cases {
            let (l, u) = ncx2_cdf_pair(x, df, ncp);
            assert!((l - lo).abs() < 1e-10, "lower {x} {df} {ncp}: {l} vs {lo}");
            assert!((u - up).abs() < 1e-10, "upper {x} {df} {ncp}: {u} vs {up}");
        }
    }

    #[test]
    fn central_case_has_zero_ncp() {
        let (l, _) = ncx2_cdf_pair(3.0, 4.0, 0.0);
        assert!((l - gamma_lr(2.0, 1.5)).abs() < 1e-14);
    }

    #[test]
    fn normal_quantile_symmetry() {
        assert_eq!(norm_quantile(0.5), 0.0);
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
    }
}
