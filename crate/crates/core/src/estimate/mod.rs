//! Estimation: CIR maximum likelihood for the interest process, closed-form
//! conditional MLE for the price process, delay selection over candidate
//! lags, and goodness-of-fit diagnostics.

mod cir;
mod gof;
mod price;

pub use cir::{
    cir_initial_guess, cir_logdensity, cir_loglik, fit_cir_mle, CirFit, TransitionInternals,
    MIN_CIR_SERIES,
};
pub use gof::{
    generalized_residuals, kolmogorov_q, ks_test, ks_test_normal, KsResult, Residuals, CLAMP,
};
pub use price::{
    fit_price_cmle, integrated_interest, price_loglik, select_lag, LagCriterion, PriceCmle,
    PriceFit, PRICE_MODEL_PARAMS,
};
