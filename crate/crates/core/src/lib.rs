//! Multimodal new-product sales forecasting with exogenous search-trend
//! signals: data handling, the cross-attention forecaster, training,
//! baselines, metrics and statistical analyses.

pub mod baselines;
pub mod dataset;
pub mod first_order;
pub mod forecasts;
#[doc(hidden)]
pub mod fuzzing;
mod error;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
