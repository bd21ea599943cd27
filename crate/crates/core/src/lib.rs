//! Real-time Value-at-Risk estimation under the offline-simulation,
//! online-estimation split.
//!
//! The offline stage simulates correlated GBM asset paths, prices an option
//! portfolio via nested Monte Carlo, and fits a quantile regression forest to
//! the resulting (risk factor, loss) pairs, optionally calibrating the fitted
//! quantiles with a split-conformal offset. The online stage is a single
//! forest evaluation per observed risk factor.
//!
//! Modules:
//! - [`market`]: market model, Black-Scholes pricing, loss generation,
//!   offline datasets, and the ground-truth VaR oracle.
//! - [`qrf`]: randomized regression trees, forest weights, and weighted
//!   empirical conditional CDF quantiles.
//! - [`conformal`]: split-conformal calibration of any quantile model.
//! - [`eval`]: MRISE / pinball / coverage metrics and the experiment runner.
//! - [`model`]: versioned on-disk model files for the online stage.

pub mod conformal;
pub mod error;
pub mod eval;
pub mod market;
pub mod model;
pub mod qrf;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Version string stamped into manifests and dataset metadata.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
