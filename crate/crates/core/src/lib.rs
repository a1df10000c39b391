#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod calibrate;
pub mod dataio;
pub mod error;
pub mod estimate;
pub mod optim;
pub mod params;
pub mod pricer;
pub mod riskneutral;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
