//! Extreme-value and near-extreme statistics for intraday log-returns.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: parent laws (Gaussian, q-exponential, uniform).
//! - [`quadrature`]: adaptive Gauss–Kronrod integration on finite intervals.
//! - [`evs`]: finite-sample maximum law, the three limit laws and their
//!   normalizing weights.
//! - [`near_extreme`]: exact and empirical near-extreme densities, and the
//!   Gaussian mixture built from blocks with local variance.
//! - [`market_pipeline`]: tick ingestion, event time, τ-lag returns, blocking.
//! - [`stats_tests`]: Kolmogorov–Smirnov, Q-Q data, histograms, ECDF.
//! - [`synthetic`]: seeded Monte Carlo drivers and synthetic tick generation.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod evs;
pub mod market_pipeline;
pub mod near_extreme;
pub mod output;
pub mod quadrature;
pub mod synthetic;

pub use distributions::ParentSpec;
pub use error::{Error, Result};



pub use evs::{LimitFamily, NormalizingWeights};
pub use near_extreme::{Mode, MixtureModel};
pub use stats_tests::{KsResult, Verdict};
