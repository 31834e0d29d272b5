//! Token-level transformer forecasting for quarterly macro panels, trained on
//! a mix of real observations and posterior-predictive simulations from a
//! linear state-space model with stochastic volatility and Student-t shocks.
//!
//! Pipeline: [`io_config`] ingests and standardizes the real sample,
//! [`simulator`] produces the synthetic corpus, [`tokenizer`] discretizes both
//! into percentile bins, [`trainer`] fits one [`transformer`] per target
//! variable on mixed batches, and [`forecast`] evaluates one-step-ahead
//! predictive distributions out of sample.

pub mod error;
pub mod forecast;
pub mod io_config;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
pub mod transformer;

pub use error::{Error, ErrorKind, Result};
